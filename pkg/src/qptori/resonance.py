"""Small-divisor admissibility tests and Monte Carlo measure estimation.

A tangential frequency is admissible when it clears three families of
nearly-resonant strips over the scan window ``Lambda_{2M}``:

* tangent:      ``|<k, omega_T>|            >= gamma / |k|_1^tau``      (k != 0)
* single-mode:  ``|<k, omega_T> - omega_j|  >= gamma / (|k|_1 + 1)^tau``
* difference:   ``|<k, omega_T> - omega_j1 + omega_j2| >= gamma / (|k|_1 + 2)^tau``
  for distinct normal modes (the sum variant is never needed here).

``gamma`` generalizes the literal unit numerator of the source sets; at
unit-scale frequencies the literal threshold excludes almost everything,
so the default is 0.05 and ``gamma = 1`` recovers the original definition.

``measure_estimate`` samples a frequency box uniformly and reports the
failing fraction with a binomial confidence radius, for comparison against
the analytic sum of strip widths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hamiltonian import ModelSpec
from .lattice import box_points, centered_box


@dataclass(frozen=True)
class ResonanceConfig:
    tau: float = 2.0
    gamma: float = 0.05
    scale_M: int = 10

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.scale_M < 1:
            raise ValueError("scale_M must be a positive integer")

    def validate_for_dim(self, m: int) -> None:
        if not self.tau > m - 1:
            raise ValueError(f"tau must exceed m - 1 = {m - 1}")


@dataclass
class Offender:
    set_name: str
    k: tuple[int, ...]
    modes: tuple[int, ...] | None
    margin: float


@dataclass
class ResonanceReport:
    admissible: bool
    worst: Offender | None
    checked: int = 0

    def __bool__(self) -> bool:
        return self.admissible


def _scan_points(m: int, scale_M: int) -> np.ndarray:
    return box_points(centered_box(m, 2 * scale_M))


def _report_from_margins(set_name, pts, modes, margins) -> ResonanceReport:
    i = int(np.argmin(margins))
    worst = Offender(
        set_name=set_name,
        k=tuple(int(v) for v in pts[i]),
        modes=modes[i] if modes is not None else None,
        margin=float(margins[i]),
    )
    return ResonanceReport(admissible=bool(margins[i] >= 0.0), worst=worst, checked=len(margins))


def tangent_resonant(omega_T: np.ndarray, cfg: ResonanceConfig) -> ResonanceReport:
    """Diophantine test over nonzero k; margin < 0 flags a violated strip.

    The margin is ``|<k, omega_T>| |k|_1^tau / gamma - 1``, minimized over
    the window.
    """
    omega_T = np.asarray(omega_T, dtype=float)
    m = omega_T.shape[0]
    cfg.validate_for_dim(m)
    pts = _scan_points(m, cfg.scale_M)
    nz = np.abs(pts).sum(axis=1) > 0
    pts = pts[nz]
    l1 = np.abs(pts).sum(axis=1).astype(float)
    vals = np.abs(pts @ omega_T)
    margins = vals * l1**cfg.tau / cfg.gamma - 1.0
    return _report_from_margins("tangent", pts, None, margins)


def melnikov1(omega_T: np.ndarray, omega_N: np.ndarray, cfg: ResonanceConfig) -> ResonanceReport:
    """First Melnikov test ``|<k, omega_T> - omega_j|`` against all normals."""
    omega_T = np.asarray(omega_T, dtype=float)
    omega_N = np.asarray(omega_N, dtype=float)
    m = omega_T.shape[0]
    cfg.validate_for_dim(m)
    if omega_N.size == 0:
        return ResonanceReport(admissible=True, worst=None, checked=0)
    pts = _scan_points(m, cfg.scale_M)
    l1 = np.abs(pts).sum(axis=1).astype(float)
    inner = pts @ omega_T
    thr = cfg.gamma / (l1 + 1.0) ** cfg.tau
    vals = np.abs(inner[:, None] - omega_N[None, :])
    margins = vals / thr[:, None] - 1.0
    flat = margins.ravel()
    reps = np.repeat(np.arange(len(pts)), omega_N.size)
    modes = [(int(j),) for _ in range(len(pts)) for j in range(omega_N.size)]
    return _report_from_margins("melnikov1", pts[reps], modes, flat)


def melnikov2(omega_T: np.ndarray, omega_N: np.ndarray, cfg: ResonanceConfig) -> ResonanceReport:
    """Difference-Melnikov test for distinct normal pairs (+ variant only).

    Vacuously admissible with fewer than two normal modes.
    """
    omega_T = np.asarray(omega_T, dtype=float)
    omega_N = np.asarray(omega_N, dtype=float)
    m = omega_T.shape[0]
    cfg.validate_for_dim(m)
    if omega_N.size < 2:
        return ResonanceReport(admissible=True, worst=None, checked=0)
    pts = _scan_points(m, cfg.scale_M)
    l1 = np.abs(pts).sum(axis=1).astype(float)
    inner = pts @ omega_T
    thr = cfg.gamma / (l1 + 2.0) ** cfg.tau
    pairs = [(j1, j2) for j1 in range(omega_N.size) for j2 in range(omega_N.size) if j1 != j2]
    diffs = np.array([omega_N[j1] - omega_N[j2] for j1, j2 in pairs])
    vals = np.abs(inner[:, None] - diffs[None, :])
    margins = (vals / thr[:, None] - 1.0).ravel()
    reps = np.repeat(np.arange(len(pts)), len(pairs))
    modes = [pairs[i % len(pairs)] for i in range(len(margins))]
    return _report_from_margins("melnikov2", pts[reps], modes, margins)


def admissible_frequency(
    omega_T: np.ndarray,
    omega_N: np.ndarray,
    cfg: ResonanceConfig,
) -> ResonanceReport:
    """Conjunction of the three strip tests with the global worst offender."""
    reports = [
        tangent_resonant(omega_T, cfg),
        melnikov1(omega_T, omega_N, cfg),
        melnikov2(omega_T, omega_N, cfg),
    ]
    worst = None
    ok = True
    checked = 0
    for rep in reports:
        ok = ok and rep.admissible
        checked += rep.checked
        if rep.worst is not None and (worst is None or rep.worst.margin < worst.margin):
            worst = rep.worst
    return ResonanceReport(admissible=ok, worst=worst, checked=checked)


def admissible(model: ModelSpec, cfg: ResonanceConfig) -> ResonanceReport:
    return admissible_frequency(model.omega_T, model.omega_N, cfg)


def _admissible_mask(samples: np.ndarray, omega_N: np.ndarray, cfg: ResonanceConfig) -> np.ndarray:
    """Vectorized admissibility over many sampled tangential frequencies."""
    m = samples.shape[1]
    pts = _scan_points(m, cfg.scale_M)
    l1 = np.abs(pts).sum(axis=1).astype(float)
    inner = samples @ pts.T  # (samples, points)
    ok = np.ones(samples.shape[0], dtype=bool)

    nz = l1 > 0
    thr0 = cfg.gamma / l1[nz] ** cfg.tau
    ok &= (np.abs(inner[:, nz]) >= thr0[None, :]).all(axis=1)

    if omega_N.size:
        thr1 = cfg.gamma / (l1 + 1.0) ** cfg.tau
        for w in omega_N:
            ok &= (np.abs(inner - w) >= thr1[None, :]).all(axis=1)
    if omega_N.size >= 2:
        thr2 = cfg.gamma / (l1 + 2.0) ** cfg.tau
        for j1 in range(omega_N.size):
            for j2 in range(omega_N.size):
                if j1 == j2:
                    continue
                d = omega_N[j1] - omega_N[j2]
                ok &= (np.abs(inner - d) >= thr2[None, :]).all(axis=1)
    return ok


def measure_estimate(
    domain: np.ndarray,
    omega_N: np.ndarray,
    cfg: ResonanceConfig,
    samples: int = 100_000,
    seed: int = 0,
) -> dict:
    """Monte Carlo fraction of inadmissible frequencies over a box domain.

    ``domain`` is ``(m, 2)`` rows of ``(lo, hi)``. Sampling is a single
    counter-based stream derived from the seed, so the result is
    reproducible regardless of worker count.
    """
    if samples < 1000:
        raise ValueError("need at least 10^3 samples for a meaningful fraction")
    domain = np.atleast_2d(np.asarray(domain, dtype=float))
    m = domain.shape[0]
    cfg.validate_for_dim(m)
    rng = np.random.Generator(np.random.Philox(key=seed))
    pts = rng.uniform(domain[:, 0], domain[:, 1], size=(samples, m))
    ok = _admissible_mask(pts, np.asarray(omega_N, dtype=float), cfg)
    frac = float(np.mean(~ok))
    ci95 = float(1.96 * np.sqrt(max(frac * (1.0 - frac), 1e-300) / samples))
    return {"fraction": frac, "ci95": ci95, "samples": samples, "seed": seed}


def analytic_strip_bound(domain: np.ndarray, omega_N: np.ndarray, cfg: ResonanceConfig) -> float:
    """Upper bound on the inadmissible fraction from summed strip widths.

    One-dimensional domains intersect each strip exactly; higher dimensions
    fall back to the slab-width bound ``2 thr / |k|_2`` per strip.
    """
    domain = np.atleast_2d(np.asarray(domain, dtype=float))
    m = domain.shape[0]
    omega_N = np.asarray(omega_N, dtype=float)
    pts = _scan_points(m, cfg.scale_M)
    l1 = np.abs(pts).sum(axis=1).astype(float)
    volume = float(np.prod(domain[:, 1] - domain[:, 0]))

    def strip_measure(k, center, thr) -> float:
        if m == 1:
            kk = k[0]
            if kk == 0:
                return volume if abs(center) < thr else 0.0
            lo = (center - thr) / kk
            hi = (center + thr) / kk
            lo, hi = min(lo, hi), max(lo, hi)
            return max(0.0, min(hi, domain[0, 1]) - max(lo, domain[0, 0]))
        k2 = float(np.linalg.norm(k))
        if k2 == 0.0:
            return volume if abs(center) < thr else 0.0
        cross = volume / float(np.min(domain[:, 1] - domain[:, 0]))
        return 2.0 * thr / k2 * cross

    total = 0.0
    for i, k in enumerate(pts):
        if l1[i] > 0:
            total += strip_measure(k, 0.0, cfg.gamma / l1[i] ** cfg.tau)
        for w in omega_N:
            total += strip_measure(k, w, cfg.gamma / (l1[i] + 1.0) ** cfg.tau)
        for j1 in range(omega_N.size):
            for j2 in range(omega_N.size):
                if j1 != j2:
                    total += strip_measure(
                        k, omega_N[j1] - omega_N[j2], cfg.gamma / (l1[i] + 2.0) ** cfg.tau
                    )
    return total / volume
