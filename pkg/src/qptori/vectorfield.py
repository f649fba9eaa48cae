"""Fourier-space vector field, its Jacobians, and lattice operator assembly.

With the quasi-periodic ansatz ``z_i(theta) = sum_k z_hat_i(k) e^{i<k,theta>}``
(and the conjugate series for ``zbar``), every polynomial expression in
``(z, zbar)`` becomes an iterated lattice convolution of the coefficient
series, with a reflected (index-negated) series standing in for each
conjugated factor. This module evaluates

* ``eval_X``   -- the field ``X_j = dH1/dzbar_j`` as lattice coefficients,
* ``eval_F``   -- the nonlinear residual of the non-resonant equation,
* ``jacobian_S`` / ``grad_Xq`` -- exact analytic derivatives of the field
  with respect to the coefficients,
* ``assemble_B`` -- the low-rank convergence-control operator coupling the
  frequency update into the linearization,
* ``assemble_L`` -- the full linearized operator ``D + eps (S + B)``
  restricted to a (possibly shifted) box.

Derivative structure: a ``z``-factor contributes at row/column offset
``k - k'`` and a ``zbar``-factor at ``k + k'``, so every Jacobian block is a
Toeplitz-plus-Hankel pair of series lookups. The two series per mode pair
are the second derivatives ``d^2 H1 / dzbar_j dz_i`` and
``d^2 H1 / dzbar_j dzbar_i`` composed with the current coefficients.

All operations are pure; monomial contributions accumulate in a fixed order
so results are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .hamiltonian import ModelSpec, Polynomial
from .lattice import (
    Box,
    FourierVector,
    LatticeSeries,
    SiteIndex,
    box_points,
    centered_box,
    convolve,
)


def resonant_sites(model: ModelSpec) -> tuple[SiteIndex, ...]:
    """Sites ``(j, e_i)`` pinned to the amplitudes; one per excited mode."""
    m = model.m
    out = []
    for i, j in enumerate(model.excited_modes):
        e = [0] * m
        e[i] = 1
        out.append(SiteIndex(j, tuple(e)))
    return tuple(out)


def pinned_vector(model: ModelSpec, zp: FourierVector | None = None, radius: int | None = None) -> FourierVector:
    """Full coefficient vector: non-resonant part plus amplitude pins."""
    if zp is None:
        r = 1 if radius is None else max(radius, 1)
        full = FourierVector(model.n, centered_box(model.m, r))
    else:
        r = max(zp.support.radius, 1) if radius is None else max(radius, 1)
        from .lattice import project

        full = project(zp, centered_box(model.m, r))
    for site, a in zip(resonant_sites(model), model.amplitudes):
        full.set(site.mode, site.index, float(a))
    return full


class SiteBasis:
    """Ordered site set of a box: mode-major, then lexicographic index.

    This order defines matrix row/column layout globally. ``excluded`` sites
    (the resonant pins) are deleted, not masked, so factorizations act on
    exactly the non-resonant unknowns.
    """

    def __init__(self, box: Box, n: int, excluded: tuple[SiteIndex, ...] = ()):
        self.box = box
        self.n = n
        self.points = box_points(box)
        size = self.points.shape[0]
        self._point_index = {tuple(int(v) for v in p): i for i, p in enumerate(self.points)}
        self.excluded = tuple(s for s in excluded if tuple(s.index) in self._point_index)
        keep = np.ones(n * size, dtype=bool)
        for s in self.excluded:
            keep[s.mode * size + self._point_index[tuple(s.index)]] = False
        self.keep = keep
        self.full_dim = n * size
        self.dim = int(keep.sum())
        self._compact = -np.ones(self.full_dim, dtype=np.int64)
        self._compact[keep] = np.arange(self.dim)
        self.modes = np.repeat(np.arange(n), size)[keep]
        self.site_points = np.tile(self.points, (n, 1))[keep]

    def index_of(self, site: SiteIndex) -> int:
        pt = self._point_index.get(tuple(site.index), -1)
        if pt < 0:
            return -1
        return int(self._compact[site.mode * self.points.shape[0] + pt])

    def sites(self) -> list[SiteIndex]:
        return [
            SiteIndex(int(j), tuple(int(v) for v in p))
            for j, p in zip(self.modes, self.site_points)
        ]

    def extract(self, vec: FourierVector) -> np.ndarray:
        """Flat coefficient vector over the kept sites (zeros off support)."""
        series = [vec.mode_series(j) for j in range(self.n)]
        cols = np.empty(self.full_dim)
        size = self.points.shape[0]
        for j in range(self.n):
            cols[j * size : (j + 1) * size] = series[j].lookup(self.points)
        return cols[self.keep]

    def inject(self, flat: np.ndarray) -> FourierVector:
        """Inverse of ``extract``: flat vector back to a box-supported vector."""
        size = self.points.shape[0]
        full = np.zeros(self.full_dim)
        full[self.keep] = flat
        values = full.reshape(self.n, size).reshape((self.n,) + self.box.shape)
        return FourierVector(self.n, self.box, values)

    def pair_l1_distances(self, other: "SiteBasis | None" = None) -> np.ndarray:
        """``|k - k'|_1`` for every kept row/column site pair."""
        cols = self if other is None else other
        diff = self.site_points[:, None, :] - cols.site_points[None, :, :]
        return np.abs(diff).sum(axis=-1)


@dataclass
class LatticeOperator:
    """Dense real matrix over site bases (rows may differ from columns)."""

    row_basis: SiteBasis
    col_basis: SiteBasis
    matrix: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def entry(self, row: SiteIndex, col: SiteIndex) -> float:
        i = self.row_basis.index_of(row)
        j = self.col_basis.index_of(col)
        if i < 0 or j < 0:
            raise KeyError("site not present in operator basis")
        return float(self.matrix[i, j])


@lru_cache(maxsize=16)
def _offset_tables(row_box: Box, col_box: Box) -> tuple[np.ndarray, np.ndarray]:
    """(k - k', k + k') multi-index tables for a box pair."""
    rows = box_points(row_box)
    cols = box_points(col_box)
    diff = rows[:, None, :] - cols[None, :, :]
    summ = rows[:, None, :] + cols[None, :, :]
    return diff, summ


def poly_lattice_series(
    poly: Polynomial,
    zhat: FourierVector,
    cache: dict | None = None,
) -> LatticeSeries:
    """Coefficient series of ``poly(z(theta), zbar(theta))`` at ``zhat``.

    Monomial-wise iterated convolution with a reflected series per
    conjugated factor; sub-products are memoized by exponent pattern, and a
    pattern's global conjugate reuses the reflected result.
    """
    m = zhat.m
    if cache is None:
        cache = {}
    base = cache.setdefault("_base", [zhat.mode_series(j) for j in range(zhat.n)])
    base_refl = cache.setdefault("_base_refl", [s.reflect() for s in base])

    def pattern_series(p: tuple[int, ...], q: tuple[int, ...]) -> LatticeSeries:
        key = (p, q)
        hit = cache.get(key)
        if hit is not None:
            return hit
        mirror = cache.get((q, p))
        if mirror is not None:
            out = mirror.reflect()
            cache[key] = out
            return out
        degree = sum(p) + sum(q)
        if degree == 0:
            out = LatticeSeries.delta(m, (0,) * m)
        else:
            for i, e in enumerate(p):
                if e:
                    rest = list(p)
                    rest[i] -= 1
                    out = convolve(pattern_series(tuple(rest), q), base[i])
                    break
            else:
                for i, e in enumerate(q):
                    if e:
                        rest = list(q)
                        rest[i] -= 1
                        out = convolve(pattern_series(p, tuple(rest)), base_refl[i])
                        break
        cache[key] = out
        return out

    total: LatticeSeries | None = None
    for mono in poly.monomials:
        term = pattern_series(mono.z_exponents, mono.zbar_exponents)
        if total is None:
            total = LatticeSeries(lower=term.lower.copy(), values=mono.coefficient * term.values)
        else:
            total = _series_add(total, term, mono.coefficient)
    if total is None:
        return LatticeSeries.zero(m)
    return total


def _series_add(acc: LatticeSeries, other: LatticeSeries, scale: float) -> LatticeSeries:
    lo = np.minimum(acc.lower, other.lower)
    hi = np.maximum(acc.upper, other.upper)
    shape = tuple(int(v) for v in (hi - lo + 1))
    vals = np.zeros(shape)
    sl_a = tuple(slice(int(a), int(a + s)) for a, s in zip(acc.lower - lo, acc.values.shape))
    sl_b = tuple(slice(int(a), int(a + s)) for a, s in zip(other.lower - lo, other.values.shape))
    vals[sl_a] += acc.values
    vals[sl_b] += scale * other.values
    return LatticeSeries(lower=lo, values=vals)


def eval_X(
    model: ModelSpec,
    zhat: FourierVector,
    out_box: Box,
    cache: dict | None = None,
) -> FourierVector:
    """Lattice coefficients of the vector field at the given state.

    Output is cropped (or zero-padded) to ``out_box``; pass a box of radius
    at least ``(d - 1) * support_radius`` to capture the full support.
    """
    if cache is None:
        cache = {}
    out = FourierVector(model.n, out_box)
    pts = box_points(out_box)
    for j in range(model.n):
        series = poly_lattice_series(model.vector_field[j], zhat, cache)
        out.values[j] = series.lookup(pts).reshape(out_box.shape)
    return FourierVector(model.n, out_box, out.values)


def field_support_radius(model: ModelSpec, zhat: FourierVector) -> int:
    """Exact support radius of the field: (d - 1) times the state's radius."""
    return max(model.degree - 1, 1) * max(zhat.support.radius, 1)


def split_qp(x: FourierVector, model: ModelSpec) -> tuple[np.ndarray, FourierVector]:
    """Resonant entries as a length-m vector, and the rest with those zeroed."""
    xq = np.empty(model.m)
    xp = x.copy()
    for i, site in enumerate(resonant_sites(model)):
        xq[i] = x.get(site.mode, site.index)
        if xp.support.contains(site.index):
            xp.set(site.mode, site.index, 0.0)
    return xq, xp


def eval_F(
    model: ModelSpec,
    zp: FourierVector,
    omega_T_prime: np.ndarray,
    cache: dict | None = None,
    out_box: Box | None = None,
) -> FourierVector:
    """Nonlinear residual on the non-resonant sites.

    ``F(j,k) = (omega_j - <k, omega_T'>) z_hat_j(k) + eps X_hat_j(k)`` with
    the full vector reassembled internally (pins at the amplitudes) and the
    resonant entries zeroed in the output. The default output box carries
    the entire field support.
    """
    full = pinned_vector(model, zp)
    if out_box is None:
        out_box = centered_box(model.m, field_support_radius(model, full))
    xhat = eval_X(model, full, out_box, cache)
    vals = np.empty_like(xhat.values)
    pts = box_points(out_box)
    k_dot = pts @ np.asarray(omega_T_prime, dtype=float)
    zfull = np.stack([full.mode_series(j).lookup(pts) for j in range(model.n)])
    for j in range(model.n):
        diag = model.omega[j] - k_dot
        vals[j] = (diag * zfull[j] + model.epsilon * xhat.values[j].ravel()).reshape(out_box.shape)
    out = FourierVector(model.n, out_box, vals)
    for site in resonant_sites(model):
        if out.support.contains(site.index):
            out.set(site.mode, site.index, 0.0)
    return out


def _jacobian_blocks(
    model: ModelSpec,
    zhat: FourierVector,
    row_box: Box,
    col_box: Box,
    cache: dict | None,
) -> np.ndarray:
    """Full (unexcluded) Jacobian matrix of the field over a box pair."""
    if cache is None:
        cache = {}
    diff, summ = _offset_tables(row_box, col_box)
    nr = diff.shape[0]
    nc = diff.shape[1]
    full = np.zeros((model.n * nr, model.n * nc))
    for j in range(model.n):
        for i in range(model.n):
            g1 = poly_lattice_series(model.field_jacobian_z[j][i], zhat, cache)
            g2 = poly_lattice_series(model.field_jacobian_zbar[j][i], zhat, cache)
            block = g1.lookup(diff) + g2.lookup(summ)
            full[j * nr : (j + 1) * nr, i * nc : (i + 1) * nc] = block
    return full


def jacobian_S(
    model: ModelSpec,
    zhat: FourierVector,
    box: Box,
    cache: dict | None = None,
    exclude: bool = True,
) -> LatticeOperator:
    """Exact analytic Jacobian of the field restricted to the box sites.

    Rows and columns at resonant sites are excluded by default (the
    non-resonant linearization); pass ``exclude=False`` for shifted-box
    diagnostics that keep every site.
    """
    excl = resonant_sites(model) if exclude else ()
    basis = SiteBasis(box, model.n, excl)
    full = _jacobian_blocks(model, zhat, box, box, cache)
    mat = full[np.ix_(basis.keep, basis.keep)]
    return LatticeOperator(basis, basis, mat)


def grad_Xq(
    model: ModelSpec,
    zhat: FourierVector,
    box: Box,
    cache: dict | None = None,
) -> LatticeOperator:
    """Derivative of the resonant field entries w.r.t. non-resonant sites.

    m rows (one per excited mode, at its pinned index), columns over the
    non-resonant sites of the box.
    """
    if cache is None:
        cache = {}
    col_basis = SiteBasis(box, model.n, resonant_sites(model))
    rows = resonant_sites(model)
    mat = np.zeros((model.m, col_basis.dim))
    col_pts = col_basis.site_points
    col_modes = col_basis.modes
    for i, site in enumerate(rows):
        e = np.asarray(site.index, dtype=np.int64)
        j = site.mode
        for jp in range(model.n):
            sel = col_modes == jp
            if not sel.any():
                continue
            g1 = poly_lattice_series(model.field_jacobian_z[j][jp], zhat, cache)
            g2 = poly_lattice_series(model.field_jacobian_zbar[j][jp], zhat, cache)
            pts = col_pts[sel]
            mat[i, sel] = g1.lookup(e[None, :] - pts) + g2.lookup(e[None, :] + pts)
    row_basis = _ResonantRowBasis(rows)
    return LatticeOperator(row_basis, col_basis, mat)


class _ResonantRowBasis:
    """Minimal basis over the m resonant sites (rows of grad_Xq)."""

    def __init__(self, sites_: tuple[SiteIndex, ...]):
        self._sites = list(sites_)
        self.dim = len(self._sites)

    def sites(self) -> list[SiteIndex]:
        return list(self._sites)

    def index_of(self, site: SiteIndex) -> int:
        try:
            return self._sites.index(site)
        except ValueError:
            return -1


def assemble_B(
    model: ModelSpec,
    zp: FourierVector,
    box: Box,
    variant: str = "chain_rule",
    cache: dict | None = None,
    basis: SiteBasis | None = None,
    gq: LatticeOperator | None = None,
) -> LatticeOperator:
    """Convergence-control operator coupling the frequency update.

    Rank at most m: ``B = - sum_i w_i u_i v_i^T`` with
    ``u_i(j,k) = k_i z_hat_j(k)`` over non-resonant rows and ``v_i`` the
    i-th row of ``grad_Xq``. ``variant='damped'`` uses the fixed weight
    ``w_i = 1/e``; ``variant='chain_rule'`` uses ``w_i = 1/a_i``, the exact
    linearization of the composite frequency-then-residual map.
    """
    if variant not in ("damped", "chain_rule"):
        raise ValueError("variant must be 'damped' or 'chain_rule'")
    if basis is None:
        basis = SiteBasis(box, model.n, resonant_sites(model))
    _, zp_only = split_qp(zp, model)  # defensively zero the pinned sites
    full = pinned_vector(model, zp_only)
    if gq is None:
        gq = grad_Xq(model, full, box, cache)
    zvals = basis.extract(zp_only)
    mat = np.zeros((basis.dim, basis.dim))
    weights = np.full(model.m, 1.0 / np.e) if variant == "damped" else 1.0 / model.amplitudes
    for i in range(model.m):
        u = basis.site_points[:, i] * zvals
        mat -= weights[i] * np.outer(u, gq.matrix[i])
    return LatticeOperator(basis, basis, mat)


def diagonal_values(model: ModelSpec, omega_T_prime: np.ndarray, basis: SiteBasis) -> np.ndarray:
    """``omega_j - <k, omega_T'>`` over the basis sites."""
    k_dot = basis.site_points @ np.asarray(omega_T_prime, dtype=float)
    return model.omega[basis.modes] - k_dot


def assemble_L(
    model: ModelSpec,
    zp: FourierVector,
    omega_T_prime: np.ndarray,
    box: Box,
    b_variant: str = "chain_rule",
    include_b: bool = True,
    exclude_resonant: bool = True,
    cache: dict | None = None,
) -> LatticeOperator:
    """Linearized operator ``D + eps (S + B)`` on the box sites.

    ``include_b=False`` yields the symmetric tangent part ``T = D + eps S``
    used by the multi-scale diagnostics.
    """
    if cache is None:
        cache = {}
    excl = resonant_sites(model) if exclude_resonant else ()
    basis = SiteBasis(box, model.n, excl)
    full = pinned_vector(model, zp, radius=max(zp.support.radius, 1))
    mat = _jacobian_blocks(model, full, box, box, cache)[np.ix_(basis.keep, basis.keep)]
    mat *= model.epsilon
    if include_b:
        b_nr = assemble_B(model, zp, box, b_variant, cache)
        if exclude_resonant:
            mat += model.epsilon * b_nr.matrix
        else:
            # Diagnostic boxes keep every site; embed the non-resonant B
            # entries into the unexcluded layout.
            idx = np.nonzero(b_nr.row_basis.keep)[0]
            mat[np.ix_(idx, idx)] += model.epsilon * b_nr.matrix
    mat[np.arange(basis.dim), np.arange(basis.dim)] += diagonal_values(model, omega_T_prime, basis)
    return LatticeOperator(basis, basis, mat)


def assemble_T(
    model: ModelSpec,
    zp: FourierVector,
    omega_T_prime: np.ndarray,
    box: Box,
    exclude_resonant: bool = True,
    cache: dict | None = None,
) -> LatticeOperator:
    """Symmetric tangent operator ``D + eps S`` on the box sites."""
    return assemble_L(
        model,
        zp,
        omega_T_prime,
        box,
        include_b=False,
        exclude_resonant=exclude_resonant,
        cache=cache,
    )
