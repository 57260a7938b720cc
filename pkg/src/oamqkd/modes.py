"""Exact algebra for same-order Laguerre-Gaussian and rotated Hermite-Gaussian modes.

Every member of the order-N Gaussian mode family is expanded over the
standard Hermite-Gaussian kets |h_{N-k,k}> of that order.  Expansion
coefficients are evaluated in exact integer/rational arithmetic and
converted to floating point once at the end, so the bases stay orthonormal
to machine precision even for high orders (factorials up to N ~ 25 would
otherwise lose digits to cancellation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import eval_hermite


@dataclass(frozen=True)
class ModeIndex:
    """Cartesian label (n, m) of an order n+m Gaussian mode family member."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 0 or self.m < 0:
            raise ValueError(f"mode indices must be nonnegative, got ({self.n}, {self.m})")

    @property
    def order(self) -> int:
        """Mode order N = n + m."""
        return self.n + self.m

    @property
    def azimuthal(self) -> int:
        """OAM quantum number l = n - m (same parity as the order)."""
        return self.n - self.m

    @property
    def radial(self) -> int:
        """Radial index p = min(n, m)."""
        return min(self.n, self.m)

    @classmethod
    def from_radial_azimuthal(cls, p: int, l: int) -> "ModeIndex":
        """Build the (n, m) label from the (p, l) one; exact inverse of the properties above."""
        if p < 0:
            raise ValueError(f"radial index must be nonnegative, got {p}")
        return cls(p + max(l, 0), p + max(-l, 0))

    def as_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "order": self.order,
                "l": self.azimuthal, "p": self.radial}


@dataclass(frozen=True, eq=False)
class HGExpansion:
    """Amplitudes of an order-N state over the standard HG kets.

    Entry k is the coefficient of |h_{N-k,k}>.  The vector is unit norm
    within 1e-12 by construction.
    """

    order: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.order + 1,):
            raise ValueError(f"expected {self.order + 1} amplitudes, got shape {amps.shape}")
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"amplitudes are not unit norm (sum of squares {norm!r})")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)


@dataclass(frozen=True, eq=False)
class PMUBPair:
    """The two ordered order-N bases with their overlap data.

    basis_l[i] / basis_h[i] follow the (n, m) = (i, N-i) ordering.
    overlap[i, j] is the coefficient of |h_j> in |l_i>, c the maximum
    squared overlap, q_mu = log2(1/c) the uncertainty bound in bits and
    theta = max_i arccos(|overlap[i, i]|) the diagonal basis angle.
    """

    order: int
    basis_l: tuple[HGExpansion, ...]
    basis_h: tuple[HGExpansion, ...]
    overlap: np.ndarray
    c: float
    q_mu: float
    theta: float

    @property
    def dimension(self) -> int:
        return self.order + 1

    def as_dict(self) -> dict:
        def ri(vec):
            return [[float(z.real), float(z.imag)] for z in vec]

        return {
            "order": self.order,
            "basis_l": [ri(s.amplitudes) for s in self.basis_l],
            "basis_h": [ri(s.amplitudes) for s in self.basis_h],
            "overlap": [ri(row) for row in self.overlap],
            "c": self.c,
            "q_mu": self.q_mu,
            "theta": self.theta,
        }


@lru_cache(maxsize=None)
def _expansion_poly(n: int, m: int) -> tuple[int, ...]:
    """Integer coefficients of (1 - t)^n (1 + t)^m, index = power of t."""
    coeffs = [1]
    for sign in (-1,) * n + (1,) * m:
        nxt = [0] * (len(coeffs) + 1)
        for i, c in enumerate(coeffs):
            nxt[i] += c
            nxt[i + 1] += sign * c
        coeffs = nxt
    return tuple(coeffs)


def b_coeff(n: int, m: int, k: int) -> float:
    """Real expansion coefficient of the k-th HG ket in an order n+m mode.

    Equals sqrt((N-k)! k! / (2^N n! m!)) times the coefficient of t^k in
    (1-t)^n (1+t)^m; the square is carried as an exact rational and only the
    final square root is floating point.
    """
    if n < 0 or m < 0:
        raise ValueError(f"mode indices must be nonnegative, got ({n}, {m})")
    total = n + m
    if not 0 <= k <= total:
        raise ValueError(f"k must lie in [0, {total}], got {k}")
    ck = _expansion_poly(n, m)[k]
    if ck == 0:
        return 0.0
    square = Fraction(
        math.factorial(total - k) * math.factorial(k) * ck * ck,
        (1 << total) * math.factorial(n) * math.factorial(m),
    )
    return math.copysign(math.sqrt(float(square)), ck)


def lg_in_hg(mode: ModeIndex | tuple[int, int]) -> HGExpansion:
    """Helical (LG-type) state of the given (n, m) label over the standard HG kets.

    Amplitude k carries the i^k phase ladder on top of the real coefficients.
    """
    n, m = _as_nm(mode)
    total = n + m
    amps = np.array([1j ** k * b_coeff(n, m, k) for k in range(total + 1)])
    return HGExpansion(total, amps)


def hg45_in_hg(mode: ModeIndex | tuple[int, int]) -> HGExpansion:
    """Diagonally rotated HG state of the given (n, m) label; all-real amplitudes."""
    n, m = _as_nm(mode)
    total = n + m
    amps = np.array([b_coeff(n, m, k) for k in range(total + 1)], dtype=complex)
    return HGExpansion(total, amps)


def _as_nm(mode) -> tuple[int, int]:
    if isinstance(mode, ModeIndex):
        return mode.n, mode.m
    n, m = mode
    return ModeIndex(int(n), int(m)).n, ModeIndex(int(n), int(m)).m


def build_pmub(order: int) -> PMUBPair:
    """Construct the two partially mutually unbiased order-N bases.

    Index i runs over (n, m) = (0, N), (1, N-1), ..., (N, 0) for both
    families, which makes the overlap matrix directly comparable between
    implementations.  The order must be a positive odd integer; exact
    integer arithmetic keeps the construction stable up to N ~ 25.
    """
    if order % 2 == 0 or order < 1:
        raise ValueError(f"order must be odd and positive, got {order}")
    basis_l = tuple(lg_in_hg((i, order - i)) for i in range(order + 1))
    basis_h = tuple(hg45_in_hg((i, order - i)) for i in range(order + 1))
    lmat = np.array([s.amplitudes for s in basis_l])
    hmat = np.array([s.amplitudes for s in basis_h])
    overlap = lmat @ hmat.conj().T
    overlap.flags.writeable = False
    c = float(np.max(np.abs(overlap) ** 2))
    q_mu = -math.log2(c)
    theta = max(math.acos(min(abs(overlap[i, i]), 1.0)) for i in range(order + 1))
    return PMUBPair(order, basis_l, basis_h, overlap, c, q_mu, theta)


def protocol_mode_indices(order: int) -> tuple[ModeIndex, ...]:
    """The (n, m) labels of the order-N channel modes, in basis order."""
    return tuple(ModeIndex(i, order - i) for i in range(order + 1))


def _hg_1d(n: int, x: np.ndarray, waist: float) -> np.ndarray:
    # normalized 1-D HG profile at the waist plane
    norm = (2.0 / math.pi) ** 0.25 / math.sqrt((2.0 ** n) * math.factorial(n) * waist)
    return norm * eval_hermite(n, math.sqrt(2.0) * x / waist) * np.exp(-(x ** 2) / waist ** 2)


def render_intensity(
    state: HGExpansion,
    waist: float,
    grid_size: int = 129,
    extent: float | None = None,
) -> np.ndarray:
    """Transverse intensity pattern of an expanded state on a square grid.

    Args:
        state: amplitudes over the standard HG kets of one order.
        waist: beam waist in meters (> 0).
        grid_size: pixels per side, at least 16; odd sizes place a pixel at
            the beam axis.
        extent: half-width of the grid in meters; defaults to
            2 * waist * sqrt(order + 1).

    Returns:
        (grid_size, grid_size) array of |field|^2 normalized to peak 1,
        indexed [iy, ix] with x the first HG index and y the second.
    """
    if waist <= 0:
        raise ValueError(f"waist must be positive, got {waist}")
    if grid_size < 16:
        raise ValueError(f"grid size must be at least 16, got {grid_size}")
    if extent is None:
        extent = 2.0 * waist * math.sqrt(state.order + 1)
    axis = np.linspace(-extent, extent, grid_size)
    x = axis[None, :]
    y = axis[:, None]
    field = np.zeros((grid_size, grid_size), dtype=complex)
    for k, amp in enumerate(state.amplitudes):
        if amp == 0:
            continue
        field += amp * _hg_1d(state.order - k, x, waist) * _hg_1d(k, y, waist)
    intensity = np.abs(field) ** 2
    peak = intensity.max()
    if peak > 0:
        intensity /= peak
    return intensity
