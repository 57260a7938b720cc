"""Monte-Carlo simulation of the prepare-measure protocol and the sorter apparatus.

The simulator works at the symbol level: states are tracked as (basis,
index) pairs, the channel acts on the symbol, and mismatched-basis
measurements sample outcomes from the squared overlap matrix.  This exactly
captures the statistics the security analysis consumes without propagating
fields.

Sessions are deterministic under their seed: rounds are processed in
fixed-size batches whose generators are spawned from one seed sequence, so
batches can run in any order (or concurrently) and merge to identical
results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .modes import HGExpansion, ModeIndex, PMUBPair, protocol_mode_indices
from .turbulence import TurbulenceParams, crosstalk_profile
from .security import JointOutcomeDistribution

BASIS_L, BASIS_H = 0, 1
INCONCLUSIVE = -1

_BATCH_SIZE = 1 << 17


@dataclass(frozen=True)
class ProtocolConfig:
    """Session parameters; exactly one of qber / turbulence drives the channel."""

    rounds: int
    order: int = 3
    qber: float | None = None
    turbulence: TurbulenceParams | None = None
    seed: int = 0
    inconclusive_policy: str = "discard"
    max_dl: int = 40

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be at least 1, got {self.rounds}")
        if self.order % 2 == 0 or self.order < 1:
            raise ValueError(f"order must be odd and positive, got {self.order}")
        if self.qber is not None and self.turbulence is not None:
            raise ValueError("specify either qber or turbulence, not both")
        q = 0.0 if self.qber is None else self.qber
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"qber must lie in [0, 1], got {self.qber}")
        if self.inconclusive_policy not in ("discard", "random"):
            raise ValueError(f"unknown inconclusive policy {self.inconclusive_policy!r}")


@dataclass(frozen=True)
class RoundRecord:
    """Raw data of one protocol round."""

    a: int
    basis_a: int
    d_out: int
    basis_b: int

    @property
    def kept(self) -> bool:
        return self.basis_a == self.basis_b and self.d_out != INCONCLUSIVE


@dataclass(frozen=True)
class SessionStats:
    """Sifted statistics of a session."""

    sifted_fraction: float
    qber_l: float
    qber_h: float
    joint_l: JointOutcomeDistribution | None
    joint_h: JointOutcomeDistribution | None
    raw_key_length: int
    insufficient: bool = False

    def as_dict(self) -> dict:
        return {
            "sifted_fraction": self.sifted_fraction,
            "qber_l": self.qber_l,
            "qber_h": self.qber_h,
            "joint_l": None if self.joint_l is None else self.joint_l.pmf.tolist(),
            "joint_h": None if self.joint_h is None else self.joint_h.pmf.tolist(),
            "raw_key_length": self.raw_key_length,
            "insufficient": self.insufficient,
        }


@dataclass(frozen=True)
class SessionResult:
    """Session statistics plus the sifted keys and Born-rule tallies.

    born_lh[i, j] counts mismatched rounds with symbol i arriving in the
    helical basis and measured as j in the diagonal basis (born_hl the
    reverse); conditioning on the arrived symbol isolates the measurement
    statistics from channel errors.
    """

    stats: SessionStats
    raw_a: np.ndarray
    raw_b: np.ndarray
    born_lh: np.ndarray
    born_hl: np.ndarray


class SymmetricChannel:
    """Correct symbol with probability 1 - q, each wrong one with q/(d-1)."""

    def __init__(self, d: int, q: float):
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"error rate must lie in [0, 1], got {q}")
        self.d = d
        self.q = q
        rows = np.full((d, d + 1), q / (d - 1))
        rows[:, d] = 0.0
        np.fill_diagonal(rows, 1.0 - q)
        self.transition = rows  # column d = inconclusive mass

    def outcome_distribution(self, symbol: int) -> dict[int, float]:
        row = self.transition[symbol]
        dist = {j: float(row[j]) for j in range(self.d) if row[j] > 0}
        if row[self.d] > 0:
            dist[INCONCLUSIVE] = float(row[self.d])
        return dist


class TurbulentChannel:
    """Symbol transitions induced by OAM crosstalk profiles.

    A shift dl carries mode l to l + dl; shifts landing on another alphabet
    mode become that symbol, anything else is inconclusive (a sorter routes
    out-of-alphabet OAM to unmonitored ports).  The 'random' policy instead
    reassigns inconclusive mass uniformly over the alphabet.
    """

    def __init__(self, order: int, params: TurbulenceParams, max_dl: int = 40,
                 policy: str = "discard"):
        modes = protocol_mode_indices(order)
        d = order + 1
        l_values = [m.azimuthal for m in modes]
        index_of_l = {l: i for i, l in enumerate(l_values)}
        rows = np.zeros((d, d + 1))
        for i, mode in enumerate(modes):
            profile = crosstalk_profile(mode, params, max_dl)
            inconclusive = profile.tail
            for dl, p in profile.probs.items():
                j = index_of_l.get(l_values[i] + dl)
                if j is None:
                    inconclusive += p
                else:
                    rows[i, j] += p
            rows[i, d] = inconclusive
        if policy == "random":
            rows[:, :d] += rows[:, d:] / d
            rows[:, d] = 0.0
        self.d = d
        self.transition = rows

    def outcome_distribution(self, symbol: int) -> dict[int, float]:
        row = self.transition[symbol]
        dist = {j: float(row[j]) for j in range(self.d) if row[j] > 0}
        if row[self.d] > 0:
            dist[INCONCLUSIVE] = float(row[self.d])
        return dist


def encode_round(rng: np.random.Generator, pmub: PMUBPair) -> tuple[int, int, HGExpansion]:
    """Draw one uniform symbol and basis bit; return them with the encoded state."""
    d = pmub.dimension
    a = int(rng.integers(0, d))
    basis_a = int(rng.integers(0, 2))
    state = (pmub.basis_l if basis_a == BASIS_L else pmub.basis_h)[a]
    return a, basis_a, state


def apply_channel(state_symbol: tuple[int, int], channel) -> dict[int, float]:
    """Outcome distribution of the channel acting on a (basis, symbol) pair.

    The basis is untouched (diagonal-basis states traverse the channel as
    helical modes of the same order and are converted back), so the
    distribution depends on the symbol only.
    """
    _, symbol = state_symbol
    return channel.outcome_distribution(symbol)


def measure_round(
    state_symbol: tuple[int, int], basis_b: int, pmub: PMUBPair,
    rng: np.random.Generator,
) -> int:
    """Measurement outcome for an arriving (basis, symbol) state.

    Matched bases reproduce the symbol; mismatched ones sample from the
    squared overlaps of the arriving state with the measurement basis.
    """
    basis_a, symbol = state_symbol
    if symbol == INCONCLUSIVE:
        return INCONCLUSIVE
    if basis_a == basis_b:
        return symbol
    weights = np.abs(pmub.overlap) ** 2
    probs = weights[symbol] if basis_a == BASIS_L else weights[:, symbol]
    return int(rng.choice(pmub.dimension, p=probs / probs.sum()))


def sift(records) -> tuple[list[int], list[int], SessionStats]:
    """Keep matched-basis conclusive rounds and estimate per-basis statistics."""
    records = list(records)
    kept = [r for r in records if r.kept]
    raw_a = [r.a for r in kept]
    raw_b = [r.d_out for r in kept]
    if not records or not kept:
        stats = SessionStats(0.0, 0.0, 0.0, None, None, 0, insufficient=True)
        return raw_a, raw_b, stats
    d = 1 + max(max(r.a for r in records), max((r.d_out for r in kept), default=0))
    counts = np.zeros((2, d, d))
    for r in kept:
        counts[r.basis_a, r.a, r.d_out] += 1
    stats = _stats_from_counts(counts, len(kept), len(records))
    return raw_a, raw_b, stats


def _stats_from_counts(counts: np.ndarray, kept: int, total: int) -> SessionStats:
    joints, qbers = [], []
    insufficient = kept == 0
    for b in range(2):
        n = counts[b].sum()
        if n == 0:
            joints.append(None)
            qbers.append(0.0)
            insufficient = True
        else:
            joints.append(JointOutcomeDistribution(counts[b].shape[0], counts[b] / n))
            qbers.append(float(1.0 - np.trace(counts[b]) / n))
    return SessionStats(
        sifted_fraction=kept / total,
        qber_l=qbers[0],
        qber_h=qbers[1],
        joint_l=joints[0],
        joint_h=joints[1],
        raw_key_length=kept,
        insufficient=insufficient,
    )


def run_session(config: ProtocolConfig, pmub: PMUBPair) -> SessionResult:
    """Simulate a full session; deterministic under config.seed."""
    if pmub.order != config.order:
        raise ValueError(f"basis order {pmub.order} does not match config order {config.order}")
    d = pmub.dimension
    if config.turbulence is not None:
        channel = TurbulentChannel(config.order, config.turbulence, config.max_dl,
                                   config.inconclusive_policy)
    else:
        channel = SymmetricChannel(d, config.qber or 0.0)
    transition_cdf = channel.transition.cumsum(axis=1)

    weights = np.abs(pmub.overlap) ** 2
    born_cdf = np.stack([weights.cumsum(axis=1), weights.T.cumsum(axis=1)])

    n_batches = (config.rounds + _BATCH_SIZE - 1) // _BATCH_SIZE
    children = np.random.SeedSequence(config.seed).spawn(n_batches)

    joint = np.zeros((2, d, d))
    born = np.zeros((2, d, d))
    kept_total = 0
    raw_a_parts, raw_b_parts = [], []
    for bi in range(n_batches):
        n = min(_BATCH_SIZE, config.rounds - bi * _BATCH_SIZE)
        rng = np.random.default_rng(children[bi])
        a = rng.integers(0, d, n)
        basis_a = rng.integers(0, 2, n)
        basis_b = rng.integers(0, 2, n)
        u = rng.random(n)
        arrived = (u[:, None] > transition_cdf[a]).sum(axis=1)  # d means inconclusive

        out = arrived.copy()
        mismatch = (basis_a != basis_b) & (arrived < d)
        r = rng.random(int(mismatch.sum()))
        rows = born_cdf[basis_a[mismatch], arrived[mismatch]]
        out[mismatch] = (r[:, None] > rows).sum(axis=1)

        keep = (basis_a == basis_b) & (arrived < d)
        kept_total += int(keep.sum())
        np.add.at(joint, (basis_a[keep], a[keep], out[keep]), 1)
        np.add.at(born, (basis_a[mismatch], arrived[mismatch], out[mismatch]), 1)
        raw_a_parts.append(a[keep])
        raw_b_parts.append(out[keep])

    stats = _stats_from_counts(joint, kept_total, config.rounds)
    return SessionResult(
        stats=stats,
        raw_a=np.concatenate(raw_a_parts) if raw_a_parts else np.empty(0, dtype=int),
        raw_b=np.concatenate(raw_b_parts) if raw_b_parts else np.empty(0, dtype=int),
        born_lh=born[BASIS_L],
        born_hl=born[BASIS_H],
    )


# --- interferometric sorter model ---------------------------------------

PORT_A, PORT_B, SUPERPOSED = "A", "B", "superposed"


class ApparatusConfigError(ValueError):
    """A mode routed into a superposition or left the stage graph."""


@dataclass(frozen=True)
class PortRule:
    """Spiral-plate shift on one output port and where that port leads."""

    shift: int = 0
    dest: int | None = None  # next stage index; None exits to the channel


@dataclass(frozen=True)
class SorterStage:
    """One Mach-Zehnder sorter: relative Dove-prism phase alpha per unit OAM.

    Routing from input 1 follows sorter_route; entering by input 2 swaps the
    output ports.  Port A chains into the next stage's input 1, port B into
    input 2.
    """

    alpha: float
    port_a: PortRule = field(default_factory=PortRule)
    port_b: PortRule = field(default_factory=PortRule)


@dataclass(frozen=True)
class SourceMode:
    """A prepared mode and its entry point into the stage graph."""

    p: int
    l: int
    stage: int = 0
    input_port: int = 1

    def __post_init__(self):
        if self.input_port not in (1, 2):
            raise ValueError(f"input port must be 1 or 2, got {self.input_port}")


def sorter_route(l: int, alpha: float) -> str:
    """Output port of a sorter for OAM l at Dove-prism phase alpha (input 1).

    The relative phase l * alpha decides: 0 mod 2pi exits port A, pi mod 2pi
    exits port B, anything else leaves the photon superposed over both.
    Exact rational arithmetic on alpha/pi avoids float-modulo artifacts.
    """
    phase = Fraction(alpha / math.pi).limit_denominator(1_000_000) * l % 2
    if phase == 0:
        return PORT_A
    if phase == 1:
        return PORT_B
    return SUPERPOSED


def default_sorter_stages() -> tuple[SorterStage, ...]:
    """Four-stage table: phases pi/4, pi/2, pi/2, pi/4 and plate shifts -2, -1, +1, +2.

    The first two stages form the preparation path (sources exit to the
    channel at stage 1); the last two mirror them with inverted shifts for
    the measurement side and are not traversed by the default sources.
    """
    return (
        SorterStage(math.pi / 4, PortRule(-2, 1), PortRule(0, 1)),
        SorterStage(math.pi / 2, PortRule(0, None), PortRule(-1, None)),
        SorterStage(math.pi / 2, PortRule(0, 3), PortRule(1, 3)),
        SorterStage(math.pi / 4, PortRule(2, None), PortRule(0, None)),
    )


def default_source_modes() -> tuple[SourceMode, ...]:
    """Source modes (p, l) = (0,4), (0,0), (1,4), (1,0); radial families split over the two inputs."""
    return (
        SourceMode(0, 4, 0, 1),
        SourceMode(0, 0, 0, 1),
        SourceMode(1, 4, 0, 2),
        SourceMode(1, 0, 0, 2),
    )


@dataclass(frozen=True)
class ModeTrace:
    """Path of one source mode through the stage graph."""

    source: SourceMode
    hops: tuple[tuple[int, str, int], ...]  # (stage, port, shift)
    p: int
    l: int

    @property
    def net_shift(self) -> int:
        return sum(shift for _, _, shift in self.hops)


def apparatus_pipeline(sources, stages) -> list[ModeTrace]:
    """Trace each source mode through the sorter stages to the channel.

    Every hop must route deterministically; a superposed routing or a
    dangling destination raises ApparatusConfigError naming the stage and
    mode.  The radial index is invariant throughout.
    """
    stages = tuple(stages)
    traces = []
    for src in sources:
        if not isinstance(src, SourceMode):
            src = SourceMode(*src)
        l = src.l
        stage_idx: int | None = src.stage
        input_port = src.input_port
        hops = []
        for _ in range(64):
            if stage_idx is None:
                break
            if not 0 <= stage_idx < len(stages):
                raise ApparatusConfigError(
                    f"stage {stage_idx} does not exist (mode p={src.p}, l={src.l})"
                )
            stage = stages[stage_idx]
            base = sorter_route(l, stage.alpha)
            if base == SUPERPOSED:
                raise ApparatusConfigError(
                    f"superposed routing at stage {stage_idx} for mode p={src.p}, l={l}"
                )
            if input_port == 2:
                base = PORT_B if base == PORT_A else PORT_A
            rule = stage.port_a if base == PORT_A else stage.port_b
            hops.append((stage_idx, base, rule.shift))
            l += rule.shift
            input_port = 1 if base == PORT_A else 2
            stage_idx = rule.dest
        else:
            raise ApparatusConfigError(
                f"mode p={src.p}, l={src.l} did not exit the stage graph within 64 hops"
            )
        traces.append(ModeTrace(src, tuple(hops), src.p, l))
    return traces
