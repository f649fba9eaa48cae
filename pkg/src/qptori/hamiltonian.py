"""Polynomial Hamiltonians in complex coordinates and the built-in models.

A model is ``H(z, zbar) = <omega . z, zbar> + eps * H1(z, zbar)`` with
``H1`` a real-coefficient polynomial, at least quadratic. Monomials are kept
in a canonical merged form so that symbolic differentiation, convolution
work, and serialization all see one representative per exponent pair.

Built-ins:

* ``henon_heiles`` -- the two-mode galactic-potential benchmark in complex
  coordinates, cubic coupling.
* ``fpu_beta`` -- the quartic (beta) nonlinear chain after the normal-mode
  transformation; Dirichlet ends, harmonic frequencies
  ``omega_k = 2 sin(k pi / (2(n+1)))``.

``ModelSpec`` additionally carries the excitation data: which modes start on
the torus (amplitude ``a_j > 0``) and which are normal (transverse). Mode
indices are 0-based everywhere, including serialized files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

# Exact-zero cross terms from expanding powers of (z + zbar) combinations
# would otherwise bloat convolution work.
MERGE_DROP_REL = 1e-14


@dataclass(frozen=True)
class Monomial:
    """``coefficient * prod z_i^p_i * prod zbar_i^q_i``."""

    coefficient: float
    z_exponents: tuple[int, ...]
    zbar_exponents: tuple[int, ...]

    @property
    def degree(self) -> int:
        return sum(self.z_exponents) + sum(self.zbar_exponents)


class Polynomial:
    """Canonical merged list of monomials in (z_1..z_n, zbar_1..zbar_n)."""

    def __init__(self, n: int, monomials: Sequence[Monomial] = ()):
        self.n = int(n)
        merged: dict[tuple, float] = {}
        for mono in monomials:
            if len(mono.z_exponents) != self.n or len(mono.zbar_exponents) != self.n:
                raise ValueError("monomial arity does not match polynomial")
            key = (tuple(mono.z_exponents), tuple(mono.zbar_exponents))
            merged[key] = merged.get(key, 0.0) + float(mono.coefficient)
        peak = max((abs(c) for c in merged.values()), default=0.0)
        cutoff = MERGE_DROP_REL * peak
        self.monomials: tuple[Monomial, ...] = tuple(
            Monomial(c, p, q) for (p, q), c in sorted(merged.items()) if abs(c) > cutoff
        )

    @property
    def degree(self) -> int:
        return max((mono.degree for mono in self.monomials), default=0)

    @property
    def min_degree(self) -> int:
        return min((mono.degree for mono in self.monomials), default=0)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(self.n, self.monomials + other.monomials)

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            return Polynomial(
                self.n,
                [Monomial(m.coefficient * other, m.z_exponents, m.zbar_exponents) for m in self.monomials],
            )
        out = []
        for a in self.monomials:
            for b in other.monomials:
                out.append(
                    Monomial(
                        a.coefficient * b.coefficient,
                        tuple(x + y for x, y in zip(a.z_exponents, b.z_exponents)),
                        tuple(x + y for x, y in zip(a.zbar_exponents, b.zbar_exponents)),
                    )
                )
        return Polynomial(self.n, out)

    __rmul__ = __mul__

    def power(self, exponent: int) -> "Polynomial":
        out = Polynomial(self.n, [Monomial(1.0, (0,) * self.n, (0,) * self.n)])
        for _ in range(exponent):
            out = out * self
        return out

    def evaluate(self, z: np.ndarray, zbar: np.ndarray) -> complex:
        z = np.asarray(z, dtype=np.complex128)
        zbar = np.asarray(zbar, dtype=np.complex128)
        total = 0.0 + 0.0j
        for mono in self.monomials:
            term = mono.coefficient
            for i, p in enumerate(mono.z_exponents):
                if p:
                    term = term * z[i] ** p
            for i, q in enumerate(mono.zbar_exponents):
                if q:
                    term = term * zbar[i] ** q
            total += term
        return complex(total)

    def is_zero(self) -> bool:
        return not self.monomials


def differentiate_z(poly: Polynomial, j: int) -> Polynomial:
    """Exact symbolic partial derivative with respect to ``z_j`` (0-based)."""
    out = []
    for mono in poly.monomials:
        p = mono.z_exponents[j]
        if p == 0:
            continue
        new_p = list(mono.z_exponents)
        new_p[j] -= 1
        out.append(Monomial(mono.coefficient * p, tuple(new_p), mono.zbar_exponents))
    return Polynomial(poly.n, out)


def differentiate_zbar(poly: Polynomial, j: int) -> Polynomial:
    """Exact symbolic partial derivative with respect to ``zbar_j`` (0-based)."""
    out = []
    for mono in poly.monomials:
        q = mono.zbar_exponents[j]
        if q == 0:
            continue
        new_q = list(mono.zbar_exponents)
        new_q[j] -= 1
        out.append(Monomial(mono.coefficient * q, mono.z_exponents, tuple(new_q)))
    return Polynomial(poly.n, out)


class ModelError(ValueError):
    """Raised when model data violates a construction invariant."""


@dataclass
class ModelSpec:
    """A polynomial Hamiltonian plus excitation data and strength eps.

    ``excited`` marks the modes that start on the torus; ``amplitudes`` lists
    their initial amplitudes ``a_j > 0`` in mode order. ``eps`` stays
    factored out of ``H1`` so diagnostics can see it separately. Instances
    are treated as immutable after construction.
    """

    n: int
    excited: np.ndarray
    omega: np.ndarray
    amplitudes: np.ndarray
    epsilon: float
    H1: Polynomial
    name: str = "custom"

    def __post_init__(self):
        self.excited = np.asarray(self.excited, dtype=bool)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        if self.excited.shape != (self.n,) or self.omega.shape != (self.n,):
            raise ModelError("excited mask and omega must have length n")
        if not self.excited.any():
            raise ModelError("at least one mode must be excited")
        if self.amplitudes.shape != (int(self.excited.sum()),):
            raise ModelError("amplitudes must list one value per excited mode")
        if (self.amplitudes <= 0).any():
            raise ModelError("excited amplitudes must be positive (a^-1 must exist)")
        if (self.omega == 0).any():
            raise ModelError("all linear frequencies must be non-zero")
        # eps = 0 is admitted as the exactly-integrable degenerate case; the
        # trivial-limit behavior of several operations is specified at it.
        if self.epsilon < 0:
            raise ModelError("epsilon must be nonnegative")
        if self.H1.n != self.n:
            raise ModelError("H1 arity does not match n")
        if self.H1.monomials and self.H1.min_degree < 2:
            raise ModelError("H1 must be at least quadratic")

    @property
    def m(self) -> int:
        return int(self.excited.sum())

    @cached_property
    def excited_modes(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.nonzero(self.excited)[0])

    @cached_property
    def normal_modes(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.nonzero(~self.excited)[0])

    @property
    def omega_T(self) -> np.ndarray:
        return self.omega[self.excited]

    @property
    def omega_N(self) -> np.ndarray:
        return self.omega[~self.excited]

    @property
    def degree(self) -> int:
        return self.H1.degree

    @cached_property
    def vector_field(self) -> tuple[Polynomial, ...]:
        """``X_j = dH1/dzbar_j`` for every mode, degree d-1 polynomials."""
        return tuple(differentiate_zbar(self.H1, j) for j in range(self.n))

    @cached_property
    def field_jacobian_z(self) -> tuple[tuple[Polynomial, ...], ...]:
        """``d^2 H1 / dzbar_j dz_i`` indexed [j][i] (difference-offset channel)."""
        return tuple(
            tuple(differentiate_z(self.vector_field[j], i) for i in range(self.n))
            for j in range(self.n)
        )

    @cached_property
    def field_jacobian_zbar(self) -> tuple[tuple[Polynomial, ...], ...]:
        """``d^2 H1 / dzbar_j dzbar_i`` indexed [j][i] (sum-offset channel)."""
        return tuple(
            tuple(differentiate_zbar(self.vector_field[j], i) for i in range(self.n))
            for j in range(self.n)
        )


def evaluate_H(model: ModelSpec, z: np.ndarray) -> float:
    """Total energy ``sum omega_j |z_j|^2 + eps H1(z, conj z)``.

    An imaginary residue beyond 1e-9 relative signals a non-real ``H1``,
    i.e. a model construction bug.
    """
    z = np.asarray(z, dtype=np.complex128)
    if not np.isfinite(z).all():
        raise ValueError("state must be finite")
    quad = float(np.sum(model.omega * np.abs(z) ** 2))
    pert = model.H1.evaluate(z, np.conj(z))
    total = quad + model.epsilon * pert
    scale = max(abs(total), 1.0)
    if abs(total.imag) > 1e-9 * scale:
        raise ModelError(f"H evaluated to a non-real value (imag {total.imag:.3e})")
    return float(total.real)


def _sum_zzbar(n: int, j: int) -> Polynomial:
    """The real combination ``z_j + zbar_j`` as a polynomial."""
    e = [0] * n
    e[j] = 1
    return Polynomial(
        n,
        [
            Monomial(1.0, tuple(e), (0,) * n),
            Monomial(1.0, (0,) * n, tuple(e)),
        ],
    )


def henon_heiles(
    epsilon: float = 0.5,
    amplitudes: Sequence[float] | None = None,
    excited: Sequence[bool] | None = None,
) -> ModelSpec:
    """Two-mode cubic benchmark with omega = (1, sqrt 2).

    ``H1 = (1/(2 sqrt 2)) (z1+zbar1)^2 (z2+zbar2) - (1/(6 sqrt 2)) (z2+zbar2)^3``
    expanded into 10 canonical monomials. Default excitation: mode 0 with
    amplitude 1.
    """
    n = 2
    u1 = _sum_zzbar(n, 0)
    u2 = _sum_zzbar(n, 1)
    h1 = (1.0 / (2.0 * np.sqrt(2.0))) * (u1 * u1 * u2) + (-1.0 / (6.0 * np.sqrt(2.0))) * (u2 * u2 * u2)
    if excited is None:
        excited = [True, False]
    if amplitudes is None:
        amplitudes = [1.0] * int(np.sum(excited))
    return ModelSpec(
        n=n,
        excited=np.asarray(excited, dtype=bool),
        omega=np.array([1.0, np.sqrt(2.0)]),
        amplitudes=np.asarray(amplitudes, dtype=float),
        epsilon=float(epsilon),
        H1=h1,
        name="henon",
    )


def fpu_normal_mode_matrix(n: int) -> np.ndarray:
    """Symmetric orthogonal matrix diagonalizing the linear chain."""
    j = np.arange(1, n + 1)
    return np.sqrt(2.0 / (n + 1)) * np.sin(np.outer(j, j) * np.pi / (n + 1))


def fpu_frequencies(n: int) -> np.ndarray:
    k = np.arange(1, n + 1)
    return 2.0 * np.sin(k * np.pi / (2.0 * (n + 1)))


def fpu_beta(
    n: int,
    epsilon: float,
    amplitudes: Sequence[float] | None = None,
    excited: Sequence[bool] | None = None,
) -> ModelSpec:
    """Quartic nonlinear chain of ``n`` unit masses, Dirichlet ends.

    In normal-mode complex coordinates the perturbation is
    ``H1 = (1/4) sum_{j=0}^{n} ( sum_k c_{j,k} (z_k + zbar_k) )^4`` with
    couplings ``c_{j,k} = (V_{j+1,k} - V_{j,k}) / sqrt(2 omega_k)`` and the
    convention that row 0 and row n+1 of V vanish.
    """
    if n < 1:
        raise ModelError("fpu_beta requires n >= 1")
    omega = fpu_frequencies(n)
    v = np.zeros((n + 2, n))
    v[1 : n + 1, :] = fpu_normal_mode_matrix(n)
    coup = (v[1:, :] - v[:-1, :]) / np.sqrt(2.0 * omega)  # rows j = 0..n
    h1 = Polynomial(n)
    for j in range(n + 1):
        linear = Polynomial(n)
        for k in range(n):
            if coup[j, k] != 0.0:
                linear = linear + coup[j, k] * _sum_zzbar(n, k)
        h1 = h1 + linear.power(4)
    h1 = 0.25 * h1
    if excited is None:
        excited = [True] + [False] * (n - 1)
    if amplitudes is None:
        amplitudes = [1.0] * int(np.sum(excited))
    return ModelSpec(
        n=n,
        excited=np.asarray(excited, dtype=bool),
        omega=omega,
        amplitudes=np.asarray(amplitudes, dtype=float),
        epsilon=float(epsilon),
        H1=h1,
        name="fpu",
    )


def model_to_dict(model: ModelSpec) -> dict:
    """JSON-ready model description (0-based mode indices)."""
    return {
        "name": model.name,
        "n": model.n,
        "m": model.m,
        "excited": [bool(b) for b in model.excited],
        "omega": [float(w) for w in model.omega],
        "amplitudes": [float(a) for a in model.amplitudes],
        "epsilon": float(model.epsilon),
        "monomials": [
            {"coeff": mono.coefficient, "p": list(mono.z_exponents), "q": list(mono.zbar_exponents)}
            for mono in model.H1.monomials
        ],
    }


def model_from_dict(data: dict) -> ModelSpec:
    n = int(data["n"])
    h1 = Polynomial(
        n,
        [
            Monomial(float(mono["coeff"]), tuple(int(x) for x in mono["p"]), tuple(int(x) for x in mono["q"]))
            for mono in data["monomials"]
        ],
    )
    return ModelSpec(
        n=n,
        excited=np.asarray(data["excited"], dtype=bool),
        omega=np.asarray(data["omega"], dtype=float),
        amplitudes=np.asarray(data["amplitudes"], dtype=float),
        epsilon=float(data["epsilon"]),
        H1=h1,
        name=str(data.get("name", "custom")),
    )


def load_model(path) -> ModelSpec:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: ModelSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def builtin_model(name: str, **kwargs) -> ModelSpec:
    if name == "henon":
        kwargs.pop("n", None)
        return henon_heiles(**kwargs)
    if name == "fpu":
        return fpu_beta(**kwargs)
    raise ModelError(f"unknown builtin model {name!r}")


def model_with_amplitude_vector(name_or_model, full_amplitudes: Sequence[float], epsilon: float, n: int | None = None) -> ModelSpec:
    """Build a model from a full-length amplitude vector.

    Nonzero entries mark the excited modes; this is how the command line
    expresses excitation (e.g. ``--amplitudes 1,0,1``).
    """
    amps = np.asarray(full_amplitudes, dtype=float)
    excited = amps != 0.0
    if not excited.any():
        raise ModelError("amplitude vector excites no modes")
    if (amps < 0).any():
        raise ModelError("amplitudes must be nonnegative")
    reduced = amps[excited]
    if isinstance(name_or_model, ModelSpec):
        base = name_or_model
        return ModelSpec(
            n=base.n,
            excited=excited,
            omega=base.omega,
            amplitudes=reduced,
            epsilon=float(epsilon),
            H1=base.H1,
            name=base.name,
        )
    if name_or_model == "henon":
        if amps.shape != (2,):
            raise ModelError("henon model has exactly 2 modes")
        return henon_heiles(epsilon=epsilon, amplitudes=reduced, excited=excited)
    if name_or_model == "fpu":
        if n is None:
            n = amps.shape[0]
        if amps.shape != (n,):
            raise ModelError("amplitude vector length must equal n")
        return fpu_beta(n=n, epsilon=epsilon, amplitudes=reduced, excited=excited)
    raise ModelError(f"unknown model {name_or_model!r}")
