"""Trajectory synthesis, Hamilton-equation residuals, and an ODE oracle.

A solved coefficient set turns into a trajectory by direct Fourier
summation ``z_j(t) = sum_k z_hat_j(k) e^{i <k, omega'> t}`` (no FFT; the
support times the time grid is trivial at desk scale). The independent
checks are:

* ``ode_residual`` -- plug the synthesized path into
  ``zdot = i omega . z + i eps dH1/dzbar`` with the time derivative taken
  term-wise (exact), and report the worst pointwise defect;
* ``reference_integrate`` -- classical fixed-step RK4 on the same equations
  of motion, used only on short horizons where its error is far below the
  comparison tolerance.

Real phase-plane coordinates follow ``z = (y - i x)/sqrt 2``, inverted as
``y = (z + zbar)/sqrt 2`` and ``x = i (z - zbar)/sqrt 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hamiltonian import ModelSpec, evaluate_H
from .lattice import FourierVector, box_points

_TIME_CHUNK = 256


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), n) complex
    coords: np.ndarray | None = None  # (len(times), n, 2) real (x, y)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=np.complex128)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.isfinite(self.states.view(float)).all():
            raise ValueError("states must be finite")


def synthesize(zhat: FourierVector, omega_T_prime: np.ndarray, times: np.ndarray) -> Trajectory:
    """Direct Fourier summation of the coefficient set on a time grid."""
    times = np.asarray(times, dtype=float)
    omega = np.asarray(omega_T_prime, dtype=float)
    pts = box_points(zhat.support)
    freqs = pts @ omega
    amps = zhat.values.reshape(zhat.n, -1)
    states = np.empty((times.size, zhat.n), dtype=np.complex128)
    for start in range(0, times.size, _TIME_CHUNK):
        t = times[start : start + _TIME_CHUNK]
        phases = np.exp(1j * np.outer(t, freqs))
        states[start : start + _TIME_CHUNK] = phases @ amps.T
    return Trajectory(times=times, states=states)


def synthesize_derivative(zhat: FourierVector, omega_T_prime: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Exact term-wise time derivative of the synthesized path."""
    times = np.asarray(times, dtype=float)
    omega = np.asarray(omega_T_prime, dtype=float)
    pts = box_points(zhat.support)
    freqs = pts @ omega
    amps = zhat.values.reshape(zhat.n, -1)
    out = np.empty((times.size, zhat.n), dtype=np.complex128)
    for start in range(0, times.size, _TIME_CHUNK):
        t = times[start : start + _TIME_CHUNK]
        phases = np.exp(1j * np.outer(t, freqs)) * (1j * freqs)[None, :]
        out[start : start + _TIME_CHUNK] = phases @ amps.T
    return out


def to_real_coords(traj: Trajectory) -> Trajectory:
    """Attach (x, y) pairs per mode; the round trip back to z is exact."""
    z = traj.states
    y = (z + np.conj(z)) / np.sqrt(2.0)
    x = 1j * (z - np.conj(z)) / np.sqrt(2.0)
    coords = np.stack([x.real, y.real], axis=-1)
    return Trajectory(times=traj.times, states=traj.states, coords=coords)


class _FieldEvaluator:
    """Vectorized monomial evaluation of the field at complex states.

    Stacks every monomial of every component into one exponent table so a
    single power/product/matvec evaluates ``dH1/dzbar`` per call; this is
    what makes the fixed-step oracle affordable.
    """

    def __init__(self, model: ModelSpec):
        self.n = model.n
        rows = []
        coeffs = []
        comp = []
        for j, poly in enumerate(model.vector_field):
            for mono in poly.monomials:
                rows.append(list(mono.z_exponents) + list(mono.zbar_exponents))
                coeffs.append(mono.coefficient)
                comp.append(j)
        if rows:
            self.expo = np.asarray(rows, dtype=np.int64)
            self.max_p = int(self.expo.max())
            self.matrix = np.zeros((model.n, len(rows)))
            self.matrix[comp, np.arange(len(rows))] = coeffs
            self.cols = np.arange(2 * model.n)
        else:
            self.expo = None

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.expo is None:
            return np.zeros(self.n, dtype=np.complex128)
        w = np.concatenate([z, np.conj(z)])
        table = np.ones((self.max_p + 1, 2 * self.n), dtype=np.complex128)
        for p in range(1, self.max_p + 1):
            table[p] = table[p - 1] * w
        products = table[self.expo, self.cols[None, :]].prod(axis=1)
        return self.matrix @ products


def hamilton_rhs(model: ModelSpec, field: _FieldEvaluator, z: np.ndarray) -> np.ndarray:
    return 1j * model.omega * z + 1j * model.epsilon * field(z)


def ode_residual(
    model: ModelSpec,
    zhat: FourierVector,
    omega_T_prime: np.ndarray,
    times: np.ndarray,
) -> dict:
    """Worst and mean Hamilton-equation defect of the synthesized path."""
    traj = synthesize(zhat, omega_T_prime, times)
    zdot = synthesize_derivative(zhat, omega_T_prime, times)
    field = _FieldEvaluator(model)
    res = np.empty(traj.times.size)
    for i, t in enumerate(traj.times):
        z = traj.states[i]
        r = zdot[i] - hamilton_rhs(model, field, z)
        res[i] = np.linalg.norm(r)
    return {"max": float(res.max()), "mean": float(res.mean()), "per_time": res}


def reference_integrate(model: ModelSpec, z0: np.ndarray, t_end: float, dt: float) -> Trajectory:
    """Classical fixed-step fourth-order integration of the motion.

    Steps may be negative for time-reversal checks. Raises if the relative
    energy drift exceeds 1e-3, which signals the step is too coarse.
    """
    if dt == 0:
        raise ValueError("dt must be nonzero")
    z0 = np.asarray(z0, dtype=np.complex128)
    field = _FieldEvaluator(model)
    steps = int(round(abs(t_end) / abs(dt)))
    h = dt if t_end >= 0 else -abs(dt)
    times = np.empty(steps + 1)
    states = np.empty((steps + 1, model.n), dtype=np.complex128)
    times[0] = 0.0
    states[0] = z0
    z = z0.copy()
    t = 0.0
    for i in range(1, steps + 1):
        k1 = hamilton_rhs(model, field, z)
        k2 = hamilton_rhs(model, field, z + 0.5 * h * k1)
        k3 = hamilton_rhs(model, field, z + 0.5 * h * k2)
        k4 = hamilton_rhs(model, field, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
        times[i] = t
        states[i] = z
        if i % 1024 == 0 and not np.isfinite(z.view(float)).all():
            raise RuntimeError(f"integration left the stability region at t={t:.3g}; use a smaller dt")
    if not np.isfinite(states.view(float)).all():
        raise RuntimeError("integration left the stability region; use a smaller dt")
    e0 = evaluate_H(model, states[0])
    e1 = evaluate_H(model, states[-1])
    drift = abs(e1 - e0) / max(abs(e0), 1e-30)
    if drift > 1e-3:
        raise RuntimeError(f"energy drift {drift:.2e} too large; use a smaller dt")
    if h < 0:
        order = np.argsort(times)
        times = times[order]
        states = states[order]
    traj = Trajectory(times=times, states=states)
    traj.energy_drift = drift
    return traj


def compare_trajectory(synth: Trajectory, ref: Trajectory) -> np.ndarray:
    """Pointwise state distance on the common grid (grids must agree)."""
    if synth.times.shape != ref.times.shape or not np.allclose(synth.times, ref.times, atol=1e-12):
        raise ValueError("trajectories must share the same time grid")
    return np.linalg.norm(synth.states - ref.states, axis=1)
