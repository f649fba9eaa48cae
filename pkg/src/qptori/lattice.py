"""Multi-index lattices, truncation boxes, and Fourier-coefficient containers.

Everything downstream (vector fields, lattice operators, the Newton loop)
is built on three objects defined here:

* ``Box`` -- a cube ``{k : |k - center|_inf <= N}`` in ``Z^m`` whose
  lexicographic enumeration fixes the global matrix row/column layout.
* ``LatticeSeries`` -- a scalar series ``c(k)`` with finite dense support,
  supporting sign-aware convolution (index negation encodes conjugation
  of a factor).
* ``FourierVector`` -- real coefficients ``z_hat_j(k)`` for ``n`` modes
  over a common support box; the unknown of the whole scheme.

Gevrey diagnostics (``gevrey_sup`` / ``gevrey_fit``) measure sub-exponential
coefficient decay ``|z_hat(k)| <= exp(-|k|_1^s)`` and are evaluated in log
space so huge exponents never overflow.

All types are value-like: nothing here mutates shared state, so instances
are safe to share read-only across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
from scipy.signal import convolve as _nd_convolve

# Dense storage flushes magnitudes below this to exact zero (denormal guard).
FLUSH_THRESHOLD = 1e-300

# Fixed 19-point grid used by gevrey_fit; s is a diagnostic, not a solver
# input, so determinism beats precision here.
GEVREY_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


class SiteIndex(NamedTuple):
    """A lattice site (mode index j, multi-index k)."""

    mode: int
    index: tuple[int, ...]


def norm1(k) -> int:
    """l1 norm |k|_1 of a multi-index."""
    return int(np.sum(np.abs(np.asarray(k, dtype=np.int64))))


def norm_inf(k) -> int:
    """sup norm |k|_inf of a multi-index."""
    a = np.abs(np.asarray(k, dtype=np.int64))
    return int(a.max()) if a.size else 0


@dataclass(frozen=True)
class Box:
    """Cube lattice ``{k in Z^m : |k - center|_inf <= radius}``."""

    center: tuple[int, ...]
    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("box radius must be nonnegative")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @property
    def m(self) -> int:
        return len(self.center)

    @property
    def shape(self) -> tuple[int, ...]:
        return (2 * self.radius + 1,) * self.m

    @property
    def size(self) -> int:
        return (2 * self.radius + 1) ** self.m

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.int64) - self.radius

    def contains(self, k) -> bool:
        d = np.abs(np.asarray(k, dtype=np.int64) - np.asarray(self.center))
        return bool((d <= self.radius).all())

    def offset_of(self, k) -> tuple[int, ...]:
        """Array index of lattice point k (no bounds check)."""
        return tuple(int(v) for v in np.asarray(k, dtype=np.int64) - self.lower)

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        lo = self.lower
        for off in np.ndindex(*self.shape):
            yield tuple(int(lo[i] + off[i]) for i in range(self.m))


def centered_box(m: int, radius: int) -> Box:
    """Box of the given radius centered at the origin of Z^m."""
    return Box(center=(0,) * m, radius=radius)


def enumerate_box(box: Box) -> list[tuple[int, ...]]:
    """Lattice points of ``box`` in lexicographic order.

    This order (first component slowest) defines the global row/column
    layout of every lattice operator, so it must never change.
    """
    return list(box)


def box_points(box: Box) -> np.ndarray:
    """All points of ``box`` as an ``(size, m)`` int array, lexicographic."""
    grids = np.meshgrid(
        *[np.arange(c - box.radius, c + box.radius + 1) for c in box.center],
        indexing="ij",
    )
    return np.stack([g.ravel() for g in grids], axis=-1).astype(np.int64)


@dataclass
class LatticeSeries:
    """Scalar series over Z^m with dense values on a rectangular support.

    ``lower`` is the multi-index of ``values[0, ..., 0]``.
    """

    lower: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != self.lower.shape[0]:
            raise ValueError("series dimensionality mismatch")

    @property
    def m(self) -> int:
        return self.values.ndim

    @property
    def upper(self) -> np.ndarray:
        return self.lower + np.asarray(self.values.shape, dtype=np.int64) - 1

    def get(self, k) -> float:
        off = np.asarray(k, dtype=np.int64) - self.lower
        if (off < 0).any() or (off >= np.asarray(self.values.shape)).any():
            return 0.0
        return float(self.values[tuple(off)])

    def reflect(self) -> "LatticeSeries":
        """Series of c(-k); encodes conjugation of the underlying factor."""
        flipped = np.flip(self.values)
        return LatticeSeries(lower=-self.upper, values=flipped.copy())

    def scaled(self, factor: float) -> "LatticeSeries":
        return LatticeSeries(lower=self.lower.copy(), values=self.values * factor)

    def lookup(self, idx: np.ndarray) -> np.ndarray:
        """Vectorized ``c(idx)`` with zeros outside the support.

        ``idx`` has shape ``(..., m)``.
        """
        off = idx - self.lower
        shape = np.asarray(self.values.shape, dtype=np.int64)
        ok = np.logical_and(off >= 0, off < shape).all(axis=-1)
        off_clipped = np.clip(off, 0, shape - 1)
        out = self.values[tuple(np.moveaxis(off_clipped, -1, 0))]
        return np.where(ok, out, 0.0)

    @staticmethod
    def delta(m: int, k, value: float = 1.0) -> "LatticeSeries":
        arr = np.full((1,) * m, float(value))
        return LatticeSeries(lower=np.asarray(k, dtype=np.int64), values=arr)

    @staticmethod
    def zero(m: int) -> "LatticeSeries":
        return LatticeSeries(lower=np.zeros(m, dtype=np.int64), values=np.zeros((1,) * m))


def convolve(
    a: LatticeSeries,
    b: LatticeSeries,
    reflect_a: bool = False,
    reflect_b: bool = False,
) -> LatticeSeries:
    """Lattice convolution ``c(k) = sum_k' a(s_a k') b(s_b (k - k'))``.

    ``s_a`` / ``s_b`` are identity or index negation per the reflect flags.
    Direct (non-FFT) evaluation: supports are tiny at desk scale and direct
    products keep the result exact up to rounding.
    """
    if a.m != b.m:
        raise ValueError("convolve: dimension mismatch")
    aa = a.reflect() if reflect_a else a
    bb = b.reflect() if reflect_b else b
    vals = _nd_convolve(aa.values, bb.values, mode="full", method="direct")
    return LatticeSeries(lower=aa.lower + bb.lower, values=vals)


@dataclass
class FourierVector:
    """Real Fourier coefficients ``z_hat_j(k)`` over a support box.

    ``values`` has shape ``(n,) + support.shape``; sites outside the support
    are identically zero. Magnitudes below ``FLUSH_THRESHOLD`` are flushed
    to exact zero at construction.
    """

    n: int
    support: Box
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros((self.n,) + self.support.shape)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.n,) + self.support.shape:
            raise ValueError("FourierVector value array has wrong shape")
        if not np.isfinite(self.values).all():
            raise ValueError("FourierVector coefficients must be finite")
        small = np.abs(self.values) < FLUSH_THRESHOLD
        if small.any():
            self.values = np.where(small, 0.0, self.values)

    @property
    def m(self) -> int:
        return self.support.m

    def copy(self) -> "FourierVector":
        return FourierVector(self.n, self.support, self.values.copy())

    def get(self, mode: int, k) -> float:
        if not self.support.contains(k):
            return 0.0
        return float(self.values[(mode,) + self.support.offset_of(k)])

    def set(self, mode: int, k, value: float) -> None:
        if not self.support.contains(k):
            raise KeyError(f"site {k} outside support box")
        self.values[(mode,) + self.support.offset_of(k)] = value

    def mode_series(self, mode: int) -> LatticeSeries:
        return LatticeSeries(lower=self.support.lower, values=self.values[mode].copy())

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2)))

    def site_norms(self) -> np.ndarray:
        """Per-lattice-point mode-vector norms ``|z_hat(k)|_2``, box-shaped."""
        return np.sqrt(np.sum(self.values**2, axis=0))

    def max_abs(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def nonzero_sites(self) -> list[SiteIndex]:
        sites = []
        pts = box_points(self.support)
        flat = self.values.reshape(self.n, -1)
        for j in range(self.n):
            for idx in np.nonzero(flat[j])[0]:
                sites.append(SiteIndex(j, tuple(int(v) for v in pts[idx])))
        return sites


def project(vec: FourierVector, box: Box) -> FourierVector:
    """Coefficients inside ``box`` preserved, everything else zeroed.

    Idempotent, and an l2 contraction.
    """
    if box.m != vec.m:
        raise ValueError("project: dimension mismatch")
    out = FourierVector(vec.n, box)
    lo_src = vec.support.lower
    hi_src = vec.support.lower + np.asarray(vec.support.shape) - 1
    lo_dst = box.lower
    hi_dst = box.lower + np.asarray(box.shape) - 1
    lo = np.maximum(lo_src, lo_dst)
    hi = np.minimum(hi_src, hi_dst)
    if (lo > hi).any():
        return out
    src_sl = tuple(slice(int(a - lo_src[i]), int(b - lo_src[i] + 1)) for i, (a, b) in enumerate(zip(lo, hi)))
    dst_sl = tuple(slice(int(a - lo_dst[i]), int(b - lo_dst[i] + 1)) for i, (a, b) in enumerate(zip(lo, hi)))
    out.values[(slice(None),) + dst_sl] = vec.values[(slice(None),) + src_sl]
    return out


def _site_log_weights(vec: FourierVector, s: float) -> tuple[np.ndarray, np.ndarray]:
    """(log site norms, |k|_1^s) over the support, flattened."""
    norms = vec.site_norms().ravel()
    pts = box_points(vec.support)
    l1 = np.abs(pts).sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore"):
        logs = np.log(norms)
    return logs, l1**s


def gevrey_log_sup(vec: FourierVector, s: float) -> float:
    """log of ``sup_k |z_hat(k)|_2 exp(|k|_1^s)``; -inf for the zero vector."""
    if not 0.0 < s < 1.0:
        raise ValueError("gevrey exponent s must lie in (0, 1)")
    logs, weights = _site_log_weights(vec, s)
    vals = logs + weights
    finite = vals[np.isfinite(vals)]
    return float(finite.max()) if finite.size else float("-inf")


def gevrey_sup(vec: FourierVector, s: float) -> float:
    """``sup_k |z_hat(k)|_2 exp(|k|_1^s)`` with log-space overflow guard.

    Membership in the Gevrey decay class is the statement ``<= 1``. Returns
    ``inf`` when the sup exceeds the floating exponent range.
    """
    log_sup = gevrey_log_sup(vec, s)
    if log_sup == float("-inf"):
        return 0.0
    if log_sup > 700.0:
        return float("inf")
    return float(np.exp(log_sup))

# Rounding guard for the fit's boundary comparison: series constructed to sit
# exactly on the class boundary must not be rejected by one ulp of log().
_FIT_TOL = 1e-12


def gevrey_fit(vec: FourierVector, grid: tuple[float, ...] = GEVREY_GRID) -> float:
    """Largest grid exponent s with ``gevrey_sup(vec, s) <= 1``; 0.0 if none."""
    if vec.max_abs() == 0.0:
        raise ValueError("gevrey_fit requires a nonzero vector")
    norms = vec.site_norms().ravel()
    pts_l1 = np.abs(box_points(vec.support)).sum(axis=1).astype(np.float64)
    keep = norms > 0.0
    logs = np.log(norms[keep])
    pts_l1 = pts_l1[keep]
    best = 0.0
    for s in grid:
        if np.max(logs + pts_l1**s) <= _FIT_TOL:
            best = s
    return best
