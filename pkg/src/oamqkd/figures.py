"""Reference-curve reproduction: delimited data plus rendered plots.

Each generator returns the rows it wrote, writes one CSV with a frozen
column contract (documented in the README) and, unless plotting is
disabled, a PNG alongside it.

    fig3: q, key_rate_4d, key_rate_bb84, key_rate_eq10, eq10_converged
    fig4: ratio, p0_<mode...>, mean_p0, qber, spread, window_mass_min
    fig5: sample, key_rate, band
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .modes import PMUBPair, protocol_mode_indices
from .security import (
    binary_entropy,
    numerical_rate_at_qber,
    practical_rate_series_from_noise,
)
from .turbulence import (
    ChannelNoise,
    channel_qber,
    operating_ratio,
    params_for_ratio,
    retention_curve,
)

FIGURE_NAMES = ("fig3", "fig4", "fig5")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _mode_label(mode) -> str:
    sign = "m" if mode.azimuthal < 0 else ""
    return f"p{mode.radial}l{sign}{abs(mode.azimuthal)}"


def key_rate_vs_error(
    pmub: PMUBPair,
    out_dir: Path,
    q_values=None,
    seed: int = 0,
    max_evals: int = 20000,
    plot: bool = True,
    threads: int = 1,
) -> dict:
    """fig3: dual-bound key rates of the 4-dimensional protocol and bb84 vs Q.

    The 4-dimensional column uses the feasible 'calibrated' constraint set;
    the verbatim 'paper-eq10' set is reported alongside with its convergence
    flag (it is infeasible, so its certificates run to the search bound).
    Grid points are independent and evaluated over ``threads`` workers.
    """
    if q_values is None:
        q_values = np.round(np.arange(0.0, 0.2001, 0.01), 10)

    def point(q: float) -> list:
        sol4 = numerical_rate_at_qber(q, "calibrated", pmub, seed=seed, max_evals=max_evals)
        solb = numerical_rate_at_qber(q, "bb84", seed=seed, max_evals=max_evals)
        sol10 = numerical_rate_at_qber(q, "paper-eq10", pmub, seed=seed, max_evals=max_evals)
        return [q, sol4.key_rate, solb.key_rate, sol10.key_rate, int(sol10.converged)]

    qs = [float(q) for q in q_values]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(point, qs))
    else:
        rows = [point(q) for q in qs]
    csv_path = out_dir / "fig3.csv"
    _write_csv(csv_path, ["q", "key_rate_4d", "key_rate_bb84", "key_rate_eq10", "eq10_converged"], rows)

    png_path = None
    if plot:
        arr = np.array([r[:3] for r in rows], dtype=float)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(arr[:, 0], np.maximum(arr[:, 1], 0.0), "o-", color="tab:blue",
                label="4-dimensional protocol")
        ax.plot(arr[:, 0], np.maximum(arr[:, 2], 0.0), "s-", color="tab:red", label="bb84")
        ax.set_xlabel("symbol error rate Q")
        ax.set_ylabel("key rate (bits per sifted symbol)")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        png_path = out_dir / "fig3.png"
        fig.savefig(png_path, dpi=150)
        plt.close(fig)
    return {"rows": rows, "csv": str(csv_path), "png": None if png_path is None else str(png_path)}


def crosstalk_vs_turbulence(
    out_dir: Path,
    beam_b: float = 0.01,
    ratio_max: float = 0.15,
    points: int = 31,
    max_dl: int = 40,
    order: int = 3,
    plot: bool = True,
) -> dict:
    """fig4: retention probability p(dl=0) of each channel mode vs r_pl/r0."""
    modes = protocol_mode_indices(order)
    ratios = np.linspace(0.0, ratio_max, points)
    data = retention_curve(modes, beam_b, ratios, max_dl)
    labels = [_mode_label(m) for m in modes]
    rows = []
    for j, ratio in enumerate(data["ratios"]):
        p0 = data["p0"][:, j]
        mean_p0 = float(p0.mean())
        qber = 1.0 - mean_p0
        spread = float(np.max(np.abs((1.0 - p0) - qber)))
        rows.append(
            [float(ratio)] + [float(v) for v in p0]
            + [mean_p0, qber, spread, float(data["window_mass"][:, j].min())]
        )
    csv_path = out_dir / "fig4.csv"
    header = ["ratio"] + [f"p0_{lab}" for lab in labels] + ["mean_p0", "qber", "spread", "window_mass_min"]
    _write_csv(csv_path, header, rows)

    png_path = None
    if plot:
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, lab in enumerate(labels):
            ax.plot(data["ratios"], data["p0"][i], label=lab)
        ax.set_xlabel("r_pl / r0")
        ax.set_ylabel("p(dl = 0)")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        png_path = out_dir / "fig4.png"
        fig.savefig(png_path, dpi=150)
        plt.close(fig)
    return {"rows": rows, "csv": str(csv_path), "png": None if png_path is None else str(png_path)}


def practical_rate_timeline(
    pmub: PMUBPair,
    out_dir: Path,
    beam_b: float = 0.01,
    ratio: float | None = None,
    samples: int = 100,
    seed: int = 0,
    plot: bool = True,
) -> dict:
    """fig5: practical key rate over time at a fixed channel operating point.

    With no explicit ratio, the channel is pinned where the mean retention
    probability of the channel modes equals 0.88.
    """
    modes = protocol_mode_indices(pmub.order)
    if ratio is None:
        ratio = operating_ratio(modes, beam_b)
    if ratio == 0.0:
        noise = ChannelNoise(0.0, 0.0, (0.0,) * len(modes))
    else:
        noise = channel_qber(modes, params_for_ratio(ratio, beam_b, modes[0]))
    series = practical_rate_series_from_noise(noise, samples, pmub, seed)
    rows = [[s.index, s.key_rate, s.band] for s in series]
    csv_path = out_dir / "fig5.csv"
    _write_csv(csv_path, ["sample", "key_rate", "band"], rows)

    png_path = None
    if plot:
        idx = np.array([s.index for s in series])
        rate = np.array([s.key_rate for s in series])
        band = series[0].band if series else 0.0
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(idx, rate, ".-", color="tab:blue", lw=0.8, label="practical key rate")
        mean = float(rate.mean())
        ax.fill_between(idx, mean - band, mean + band, color="tab:blue", alpha=0.2,
                        label="channel-spread band")
        ax.set_xlabel("time index")
        ax.set_ylabel("key rate (bits per sifted symbol)")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        png_path = out_dir / "fig5.png"
        fig.savefig(png_path, dpi=150)
        plt.close(fig)
    return {
        "rows": rows,
        "csv": str(csv_path),
        "png": None if png_path is None else str(png_path),
        "ratio": float(ratio),
        "qber": noise.q,
        "spread": noise.spread,
    }


def render_mode_gallery(pmub: PMUBPair, out_dir: Path, waist: float = 1.0,
                        grid_size: int = 129) -> str:
    """Montage of the intensity patterns of both bases, one PNG."""
    from .modes import render_intensity

    d = pmub.dimension
    fig, axes = plt.subplots(2, d, figsize=(2.2 * d, 4.6))
    for i in range(d):
        for row, (basis, name) in enumerate(((pmub.basis_l, "l"), (pmub.basis_h, "h"))):
            img = render_intensity(basis[i], waist, grid_size)
            ax = axes[row, i]
            ax.imshow(img, cmap="inferno", origin="lower")
            ax.set_title(f"{name}[{i}]", fontsize=9)
            ax.set_xticks([])
            ax.set_yticks([])
    fig.tight_layout()
    path = out_dir / f"modes_order{pmub.order}.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
