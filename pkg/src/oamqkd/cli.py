"""Command-line frontend.

Subcommands: modes, turbulence, simulate, keyrate, apparatus, figure.
Every run prints one JSON envelope (command, echoed parameters, results,
tool version, and the seed / numerical tolerances when applicable) and
returns exit code 0 on success, 1 on numerical non-convergence (the best
certificate is still emitted) and 2 on usage errors.

A JSON config file (--config) can pre-set any flag of the chosen
subcommand, keyed by the flag name with dashes replaced by underscores;
explicit flags override it.  The output directory honors the
OAMQKD_OUTDIR environment variable.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .modes import ModeIndex, build_pmub, protocol_mode_indices, render_intensity
from .protocol import (
    ApparatusConfigError,
    PortRule,
    ProtocolConfig,
    SorterStage,
    SourceMode,
    apparatus_pipeline,
    default_sorter_stages,
    default_source_modes,
    run_session,
)
from .security import (
    analytic_rate_at_qber,
    numerical_rate_at_qber,
)
from .turbulence import (
    QuadratureError,
    TurbulenceParams,
    channel_qber,
    crosstalk_profile,
)

QUAD_ABS_TOL = 1e-9
OPT_XATOL = 1e-7


def _emit(envelope: dict, output: str | None) -> None:
    text = json.dumps(envelope, sort_keys=True, indent=2) + "\n"
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _envelope(command: str, params: dict, results: dict,
              seed: int | None = None, tolerances: dict | None = None) -> dict:
    env = {
        "command": command,
        "params": params,
        "results": results,
        "tool_version": __version__,
    }
    if seed is not None:
        env["seed"] = seed
    if tolerances is not None:
        env["tolerances"] = tolerances
    return env


def _out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_alpha(value) -> float:
    """Radians as a number, or a 'pi/k' / 'k*pi/m' style string."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().lower().replace(" ", "")
    if "pi" not in text:
        return float(text)
    num, _, den = text.partition("/")
    num = num.replace("*", "")
    factor = 1.0 if num in ("pi", "+pi") else (-1.0 if num == "-pi" else float(num.replace("pi", "")))
    return factor * math.pi / (float(den) if den else 1.0)


def _parse_mode(text: str) -> ModeIndex:
    p, l = (int(v) for v in text.split(","))
    return ModeIndex.from_radial_azimuthal(p, l)


def _turbulence_from_args(args) -> TurbulenceParams:
    if getattr(args, "turbulence", None):
        payload = json.loads(Path(args.turbulence).read_text())
        if "fried_r0" in payload:
            return TurbulenceParams(payload["fried_r0"], payload["beam_b"])
        return TurbulenceParams.from_structure_constant(
            payload["cn2"], payload["wavelength"], payload["path_length"], payload["beam_b"]
        )
    if args.r0 is not None:
        return TurbulenceParams(args.r0, args.beam_b)
    if args.cn2 is not None:
        return TurbulenceParams.from_structure_constant(
            args.cn2, args.wavelength, args.path_length, args.beam_b
        )
    raise ValueError("turbulence strength requires --r0 or --cn2/--wavelength/--path-length")


def _write_pgm(path: Path, image: np.ndarray) -> None:
    levels = np.clip(np.round(image * 255), 0, 255).astype(int)
    lines = [f"P2\n{image.shape[1]} {image.shape[0]}\n255\n"]
    lines += [" ".join(str(v) for v in row) + "\n" for row in levels]
    path.write_text("".join(lines))


# --- subcommand handlers -------------------------------------------------

def _cmd_modes(args) -> int:
    pmub = build_pmub(args.order)
    results: dict = {"pmub": pmub.as_dict()}
    if args.render:
        out = _out_dir(args)
        files = []
        grids = {}
        for name, basis in (("l", pmub.basis_l), ("h", pmub.basis_h)):
            for i, state in enumerate(basis):
                img = render_intensity(state, args.waist, args.grid_size)
                stem = f"modes_order{args.order}_{name}{i}"
                if args.render_format == "pgm":
                    path = out / f"{stem}.pgm"
                    _write_pgm(path, img)
                else:
                    path = out / f"{stem}.csv"
                    np.savetxt(path, img, delimiter=",")
                files.append(str(path))
                grids[stem] = path.name
        if not args.no_plot:
            from .figures import render_mode_gallery

            files.append(render_mode_gallery(pmub, out, args.waist, args.grid_size))
        results["files"] = files
    _emit(_envelope("modes", {"order": args.order, "render": args.render,
                              "waist": args.waist, "grid_size": args.grid_size},
                    results), args.output)
    return 0


def _cmd_turbulence(args) -> int:
    params = _turbulence_from_args(args)
    modes = [_parse_mode(m) for m in args.mode] if args.mode else list(protocol_mode_indices(args.order))
    profiles = [crosstalk_profile(m, params, args.max_dl) for m in modes]
    noise = channel_qber(modes, params)
    results = {
        "profiles": [p.as_dict() for p in profiles],
        "qber": noise.q,
        "spread": noise.spread,
        "per_mode_error": list(noise.per_mode),
    }
    if args.csv:
        out = _out_dir(args)
        path = out / args.csv
        with open(path, "w") as fh:
            fh.write("mode,dl,prob\n")
            for prof in profiles:
                label = f"p{prof.mode.radial}l{prof.mode.azimuthal}"
                for dl in sorted(prof.probs):
                    fh.write(f"{label},{dl},{prof.probs[dl]!r}\n")
        results["csv"] = str(path)
    _emit(_envelope("turbulence",
                    {"params": params.as_dict(), "max_dl": args.max_dl,
                     "modes": [m.as_dict() for m in modes]},
                    results, tolerances={"quad_abs_tol": QUAD_ABS_TOL}), args.output)
    return 0


def _cmd_simulate(args) -> int:
    rounds = int(float(args.rounds))
    turbulence = _turbulence_from_args(args) if (args.turbulence or args.r0 or args.cn2) else None
    config = ProtocolConfig(
        rounds=rounds,
        order=args.order,
        qber=None if turbulence is not None else args.qber,
        turbulence=turbulence,
        seed=args.seed,
        inconclusive_policy=args.inconclusive,
        max_dl=args.max_dl,
    )
    pmub = build_pmub(args.order)
    session = run_session(config, pmub)
    results = {
        "stats": session.stats.as_dict(),
        "born_lh": session.born_lh.tolist(),
        "born_hl": session.born_hl.tolist(),
    }
    if args.raw_keys:
        out = _out_dir(args)
        for suffix, data in (("alice", session.raw_a), ("bob", session.raw_b)):
            path = out / f"{args.raw_keys}_{suffix}.txt"
            path.write_text("".join(f"{v}\n" for v in data))
            results[f"raw_key_{suffix}"] = str(path)
    params = {
        "rounds": rounds, "order": args.order, "qber": config.qber,
        "turbulence": None if turbulence is None else turbulence.as_dict(),
        "inconclusive": args.inconclusive, "max_dl": args.max_dl,
    }
    _emit(_envelope("simulate", params, results, seed=args.seed), args.output)
    return 0


def _cmd_keyrate(args) -> int:
    if args.mode == "analytic":
        pmub = build_pmub(args.order)
        rate = analytic_rate_at_qber(args.qber, pmub)
        results = {
            "keyRate": rate.key_rate,
            "unclamped": rate.unclamped,
            "q_mu": rate.q_mu,
            "ec_cost_per_basis": rate.cost_l,
        }
        _emit(_envelope("keyrate analytic", {"qber": args.qber, "order": args.order},
                        results), args.output)
        return 0

    pmub = build_pmub(args.order) if args.preset != "bb84" else None
    solution = numerical_rate_at_qber(
        args.qber, args.preset, pmub, args.theta_override,
        starts=args.starts, max_evals=args.max_evals, seed=args.seed,
    )
    results = {
        "kappa": solution.kappa,
        "keyRate": solution.key_rate,
        "lambdas": list(solution.lambdas),
        "converged": solution.converged,
        "evaluations": solution.evaluations,
    }
    if args.sweep:
        out = _out_dir(args)
        path = out / f"keyrate_{args.preset}_sweep.csv"
        with open(path, "w") as fh:
            fh.write("q,key_rate\n")
            q = 0.0
            while q <= args.q_max + 1e-12:
                sol = numerical_rate_at_qber(
                    q, args.preset, pmub, args.theta_override,
                    starts=args.starts, max_evals=args.max_evals, seed=args.seed,
                )
                fh.write(f"{q!r},{sol.key_rate!r}\n")
                q = round(q + args.q_step, 12)
        results["sweep_csv"] = str(path)
    params = {
        "preset": args.preset, "qber": args.qber, "order": args.order,
        "theta_override": args.theta_override,
        "starts": args.starts, "max_evals": args.max_evals,
    }
    _emit(_envelope("keyrate numerical", params, results, seed=args.seed,
                    tolerances={"xatol": OPT_XATOL}), args.output)
    return 0 if solution.converged else 1


def _load_stages(path: str) -> tuple[SorterStage, ...]:
    payload = json.loads(Path(path).read_text())

    def rule(entry) -> PortRule:
        return PortRule(int(entry.get("shift", 0)), entry.get("dest"))

    return tuple(
        SorterStage(_parse_alpha(s["alpha"]), rule(s.get("port_a", {})), rule(s.get("port_b", {})))
        for s in payload
    )


def _load_sources(path: str) -> tuple[SourceMode, ...]:
    payload = json.loads(Path(path).read_text())
    return tuple(
        SourceMode(int(s["p"]), int(s["l"]), int(s.get("stage", 0)), int(s.get("input_port", 1)))
        for s in payload
    )


def _cmd_apparatus(args) -> int:
    stages = _load_stages(args.stages) if args.stages else default_sorter_stages()
    sources = _load_sources(args.sources) if args.sources else default_source_modes()
    traces = apparatus_pipeline(sources, stages)
    results = {
        "channel_modes": [{"p": t.p, "l": t.l} for t in traces],
        "traces": [
            {
                "source": {"p": t.source.p, "l": t.source.l,
                           "stage": t.source.stage, "input_port": t.source.input_port},
                "hops": [{"stage": s, "port": p, "shift": d} for s, p, d in t.hops],
                "net_shift": t.net_shift,
            }
            for t in traces
        ],
    }
    _emit(_envelope("apparatus",
                    {"stages": args.stages or "default", "sources": args.sources or "default"},
                    results), args.output)
    return 0


def _cmd_figure(args) -> int:
    from . import figures

    out = _out_dir(args)
    if args.name == "fig3":
        pmub = build_pmub(3)
        q_values = np.round(np.arange(0.0, args.q_max + 1e-12, args.q_step), 10)
        info = figures.key_rate_vs_error(pmub, out, q_values, seed=args.seed,
                                         max_evals=args.max_evals, plot=not args.no_plot,
                                         threads=args.threads)
        params = {"name": "fig3", "q_max": args.q_max, "q_step": args.q_step,
                  "max_evals": args.max_evals}
        tolerances = {"xatol": OPT_XATOL}
    elif args.name == "fig4":
        info = figures.crosstalk_vs_turbulence(out, beam_b=args.beam_b,
                                               ratio_max=args.ratio_max, points=args.points,
                                               max_dl=args.max_dl, plot=not args.no_plot)
        params = {"name": "fig4", "beam_b": args.beam_b, "ratio_max": args.ratio_max,
                  "points": args.points, "max_dl": args.max_dl}
        tolerances = {"quad_abs_tol": QUAD_ABS_TOL}
    else:
        pmub = build_pmub(3)
        info = figures.practical_rate_timeline(pmub, out, beam_b=args.beam_b,
                                               ratio=args.ratio, samples=args.samples,
                                               seed=args.seed, plot=not args.no_plot)
        params = {"name": "fig5", "beam_b": args.beam_b, "ratio": args.ratio,
                  "samples": args.samples}
        tolerances = {"quad_abs_tol": QUAD_ABS_TOL}
    results = {k: v for k, v in info.items() if k != "rows"}
    _emit(_envelope("figure", params, results, seed=args.seed, tolerances=tolerances),
          args.output)
    return 0


# --- parser --------------------------------------------------------------

def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="oamqkd", description=__doc__)
    parser.add_argument("--config", help="JSON file pre-setting subcommand flags")
    sub = parser.add_subparsers(dest="command", required=True)
    registry = {}

    def common(p):
        p.add_argument("--out-dir", default=os.environ.get("OAMQKD_OUTDIR", "."),
                       help="directory for generated files")
        p.add_argument("--output", default=None, help="write the JSON envelope here instead of stdout")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="parallelism hint for internal sweeps")

    p = sub.add_parser("modes", help="basis construction and intensity rendering")
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--render", action="store_true")
    p.add_argument("--render-format", choices=("pgm", "csv"), default="pgm")
    p.add_argument("--waist", type=float, default=1.0, help="beam waist in meters")
    p.add_argument("--grid-size", type=int, default=129)
    p.add_argument("--no-plot", action="store_true")
    common(p)
    registry["modes"] = (p, _cmd_modes)

    p = sub.add_parser("turbulence", help="crosstalk profiles and channel error rate")
    p.add_argument("--r0", type=float, default=None, help="Fried parameter in meters")
    p.add_argument("--beam-b", type=float, default=0.01, help="beam radius scale in meters")
    p.add_argument("--cn2", type=float, default=None, help="structure constant in m^(-2/3)")
    p.add_argument("--wavelength", type=float, default=1e-6)
    p.add_argument("--path-length", type=float, default=None)
    p.add_argument("--turbulence", default=None, help="JSON file with channel parameters")
    p.add_argument("--mode", action="append", default=None, metavar="P,L",
                   help="channel mode as p,l (repeatable; default: the four order-3 modes)")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--max-dl", type=int, default=40)
    p.add_argument("--csv", default=None, help="also write (mode, dl, prob) rows to this file")
    common(p)
    registry["turbulence"] = (p, _cmd_turbulence)

    p = sub.add_parser("simulate", help="Monte-Carlo protocol session")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--rounds", required=True, help="number of rounds (scientific notation ok)")
    p.add_argument("--qber", type=float, default=0.0)
    p.add_argument("--turbulence", default=None, help="JSON file with channel parameters")
    p.add_argument("--r0", type=float, default=None)
    p.add_argument("--beam-b", type=float, default=0.01)
    p.add_argument("--cn2", type=float, default=None)
    p.add_argument("--wavelength", type=float, default=1e-6)
    p.add_argument("--path-length", type=float, default=None)
    p.add_argument("--max-dl", type=int, default=40)
    p.add_argument("--inconclusive", choices=("discard", "random"), default="discard")
    p.add_argument("--raw-keys", default=None, help="prefix for raw-key files (one symbol per line)")
    common(p)
    registry["simulate"] = (p, _cmd_simulate)

    p = sub.add_parser("keyrate", help="key-rate certification")
    mode_sub = p.add_subparsers(dest="mode", required=True)
    pa = mode_sub.add_parser("analytic")
    pa.add_argument("--qber", type=float, required=True)
    pa.add_argument("--order", type=int, default=3)
    common(pa)
    registry["keyrate-analytic"] = (pa, None)
    pn = mode_sub.add_parser("numerical")
    pn.add_argument("--preset", choices=("paper-eq10", "calibrated", "bb84"), required=True)
    pn.add_argument("--qber", type=float, required=True)
    pn.add_argument("--order", type=int, default=3)
    pn.add_argument("--theta-override", type=float, default=None, metavar="RAD")
    pn.add_argument("--starts", type=int, default=8)
    pn.add_argument("--max-evals", type=int, default=20000)
    pn.add_argument("--sweep", action="store_true", help="also write a (q, key_rate) CSV")
    pn.add_argument("--q-max", type=float, default=0.2)
    pn.add_argument("--q-step", type=float, default=0.01)
    common(pn)
    registry["keyrate-numerical"] = (pn, None)
    registry["keyrate"] = (p, _cmd_keyrate)

    p = sub.add_parser("apparatus", help="sorter-stage routing check")
    p.add_argument("--stages", default=None, help="JSON stage table")
    p.add_argument("--sources", default=None, help="JSON source-mode list")
    common(p)
    registry["apparatus"] = (p, _cmd_apparatus)

    p = sub.add_parser("figure", help="reference-curve data and plots")
    p.add_argument("name", choices=("fig3", "fig4", "fig5"))
    p.add_argument("--q-max", type=float, default=0.2)
    p.add_argument("--q-step", type=float, default=0.01)
    p.add_argument("--max-evals", type=int, default=20000)
    p.add_argument("--beam-b", type=float, default=0.01)
    p.add_argument("--ratio-max", type=float, default=0.15)
    p.add_argument("--points", type=int, default=31)
    p.add_argument("--max-dl", type=int, default=40)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--no-plot", action="store_true")
    common(p)
    registry["figure"] = (p, _cmd_figure)

    return parser, registry


def _apply_config(argv: list[str], registry: dict) -> None:
    if "--config" not in argv:
        return
    idx = argv.index("--config")
    path = argv[idx + 1]
    config = json.loads(Path(path).read_text())
    if not isinstance(config, dict):
        raise ValueError("config file must hold a JSON object of flag values")
    rest = argv[:idx] + argv[idx + 2:]
    tokens = [t for t in rest if not t.startswith("-")]
    if not tokens:
        return
    name = tokens[0]
    if name == "keyrate" and len(tokens) > 1:
        name = f"keyrate-{tokens[1]}"
    if name not in registry:
        return
    target = registry[name][0]
    known = {a.dest for a in target._actions}
    unknown = set(config) - known
    if unknown:
        raise ValueError(f"unknown config keys for {name!r}: {sorted(unknown)}")
    target.set_defaults(**config)
    for action in target._actions:
        if action.dest in config:
            action.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = _build_parser()
    try:
        _apply_config(argv, registry)
        args = parser.parse_args(argv)
        handler = registry[args.command][1]
        return handler(args)
    except ValueError as exc:  # ApparatusConfigError included
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QuadratureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
