import numpy as np
import pytest

from qptori.hamiltonian import ModelSpec, Polynomial, fpu_beta, henon_heiles
from qptori.lattice import FourierVector, SiteIndex, centered_box, gevrey_log_sup
from qptori.vectorfield import (
    SiteBasis,
    assemble_B,
    assemble_L,
    assemble_T,
    diagonal_values,
    eval_F,
    eval_X,
    field_support_radius,
    grad_Xq,
    jacobian_S,
    pinned_vector,
    resonant_sites,
    split_qp,
)

SQRT2 = np.sqrt(2.0)


def random_gevrey_state(model, radius, seed, s=0.5, scale=0.9):
    """Non-resonant coefficients bounded by the decay profile."""
    rng = np.random.default_rng(seed)
    box = centered_box(model.m, radius)
    vec = FourierVector(model.n, box)
    for k in box:
        l1 = sum(abs(v) for v in k)
        for j in range(model.n):
            vec.set(j, k, scale * rng.uniform(-1, 1) * np.exp(-(l1**s)) / np.sqrt(model.n))
    vec = FourierVector(model.n, box, vec.values)
    _, zp = split_qp(vec, model)
    return zp


class TestEvalX:
    def test_iterate_zero_values(self):
        model = henon_heiles()
        x = eval_X(model, pinned_vector(model), centered_box(1, 4))
        assert np.abs(x.values[0]).max() == 0.0
        assert abs(x.get(1, (0,)) - 1.0 / SQRT2) < 1e-15
        assert abs(x.get(1, (2,)) - 1.0 / (2.0 * SQRT2)) < 1e-15
        assert abs(x.get(1, (-2,)) - 1.0 / (2.0 * SQRT2)) < 1e-15
        total = np.abs(x.values).sum()
        assert abs(total - (1.0 / SQRT2 + 1.0 / SQRT2)) < 1e-14

    def test_zero_state_gives_zero_field(self):
        for model in (henon_heiles(), fpu_beta(3, 1.0)):
            zero = FourierVector(model.n, centered_box(model.m, 1))
            x = eval_X(model, zero, centered_box(model.m, 3))
            assert x.l2_norm() == 0.0

    def test_quadrature_oracle(self):
        model = henon_heiles()
        rng = np.random.default_rng(42)
        zhat = FourierVector(2, centered_box(1, 2), rng.normal(size=(2, 5)) * 0.3)
        out = eval_X(model, zhat, centered_box(1, 6))
        theta = 2.0 * np.pi * np.arange(512) / 512.0
        z = np.zeros((2, theta.size), dtype=complex)
        for j in range(2):
            for k in range(-2, 3):
                z[j] += zhat.get(j, (k,)) * np.exp(1j * k * theta)
        for j in range(2):
            vals = np.array(
                [model.vector_field[j].evaluate(z[:, t], np.conj(z[:, t])) for t in range(theta.size)]
            )
            for k in range(-6, 7):
                coef = np.mean(vals * np.exp(-1j * k * theta))
                assert abs(coef - out.get(j, (k,))) < 1e-10

    def test_output_is_real_storage(self):
        model = fpu_beta(3, 1.0)
        x = eval_X(model, pinned_vector(model), centered_box(1, 3))
        assert x.values.dtype == np.float64


class TestSplitQp:
    def test_iterate_zero_field_split(self):
        model = henon_heiles()
        x = eval_X(model, pinned_vector(model), centered_box(1, 4))
        xq, xp = split_qp(x, model)
        np.testing.assert_array_equal(xq, [0.0])
        np.testing.assert_array_equal(xp.values, x.values)

    def test_delta_at_resonant_site(self):
        model = henon_heiles()
        vec = FourierVector(2, centered_box(1, 2))
        vec.set(0, (1,), 1.0)
        xq, xp = split_qp(vec, model)
        np.testing.assert_array_equal(xq, [1.0])
        assert xp.l2_norm() == 0.0

    def test_partition_reconstructs(self):
        model = fpu_beta(3, 1.0, excited=[True, True, False])
        rng = np.random.default_rng(3)
        vec = FourierVector(3, centered_box(2, 2), rng.normal(size=(3, 5, 5)))
        xq, xp = split_qp(vec, model)
        back = xp.copy()
        for i, site in enumerate(resonant_sites(model)):
            back.set(site.mode, site.index, xq[i])
        np.testing.assert_array_equal(back.values, vec.values)


class TestEvalF:
    def test_iterate_zero_values(self):
        model = henon_heiles()
        zp = FourierVector(2, centered_box(1, 1))
        f = eval_F(model, zp, np.array([1.0]))
        assert abs(f.get(1, (0,)) - 0.5 / SQRT2) < 1e-15
        assert abs(f.get(1, (2,)) - 0.5 / (2.0 * SQRT2)) < 1e-15
        assert f.get(0, (1,)) == 0.0  # resonant site zeroed

    def test_unperturbed_residual_vanishes(self):
        model = henon_heiles(epsilon=0.0)
        zp = FourierVector(2, centered_box(1, 1))
        f = eval_F(model, zp, model.omega_T)
        assert f.l2_norm() == 0.0

    def test_support_within_degree_envelope(self):
        model = fpu_beta(3, 1.0)
        zp = random_gevrey_state(model, 3, seed=1)
        f = eval_F(model, zp, model.omega_T)
        assert f.support.radius <= model.degree * 3
        assert f.support.radius == field_support_radius(model, pinned_vector(model, zp))


class TestJacobian:
    def test_iterate_zero_entries(self):
        model = henon_heiles()
        s = jacobian_S(model, pinned_vector(model), centered_box(1, 4))
        assert abs(s.entry(SiteIndex(1, (2,)), SiteIndex(0, (3,))) - 1.0 / SQRT2) < 1e-15
        for k in (-2, 0, 2, 3):
            for kp in (-1, 0, 1, 2):
                assert s.entry(SiteIndex(1, (k,)), SiteIndex(1, (kp,))) == 0.0

    @pytest.mark.parametrize("model_fn,seed", [(henon_heiles, 21), (lambda: fpu_beta(3, 0.8), 22)])
    def test_finite_difference_oracle(self, model_fn, seed):
        model = model_fn()
        box = centered_box(model.m, 2)
        basis = SiteBasis(box, model.n, resonant_sites(model))
        zp = random_gevrey_state(model, 2, seed=seed)
        full = pinned_vector(model, zp)
        s = jacobian_S(model, full, box)
        h = 1e-6
        worst = 0.0
        for cj, col in enumerate(basis.sites()):
            zp_p = zp.copy()
            zp_p.set(col.mode, col.index, zp.get(col.mode, col.index) + h)
            zp_m = zp.copy()
            zp_m.set(col.mode, col.index, zp.get(col.mode, col.index) - h)
            xp = eval_X(model, pinned_vector(model, zp_p), box)
            xm = eval_X(model, pinned_vector(model, zp_m), box)
            fd = (basis.extract(xp) - basis.extract(xm)) / (2.0 * h)
            scale = max(np.abs(fd).max(), 1.0)
            worst = max(worst, np.abs(fd - s.matrix[:, cj]).max() / scale)
        assert worst < 1e-6

    def test_grad_xq_values(self):
        model = henon_heiles()
        g = grad_Xq(model, pinned_vector(model), centered_box(1, 4))
        # k' = 0 hits both derivative channels at the same offset -> sqrt 2
        i0 = g.col_basis.index_of(SiteIndex(1, (0,)))
        i2 = g.col_basis.index_of(SiteIndex(1, (2,)))
        assert abs(g.matrix[0, i0] - SQRT2) < 1e-15
        assert abs(g.matrix[0, i2] - 1.0 / SQRT2) < 1e-15

    def test_grad_xq_finite_difference(self):
        model = fpu_beta(3, 0.5, excited=[True, True, False])
        box = centered_box(2, 2)
        zp = random_gevrey_state(model, 2, seed=5)
        g = grad_Xq(model, pinned_vector(model, zp), box)
        h = 1e-6
        worst = 0.0
        for cj, col in enumerate(g.col_basis.sites()):
            zp_p = zp.copy()
            zp_p.set(col.mode, col.index, zp.get(col.mode, col.index) + h)
            zp_m = zp.copy()
            zp_m.set(col.mode, col.index, zp.get(col.mode, col.index) - h)
            xq_p, _ = split_qp(eval_X(model, pinned_vector(model, zp_p), centered_box(2, 1)), model)
            xq_m, _ = split_qp(eval_X(model, pinned_vector(model, zp_m), centered_box(2, 1)), model)
            fd = (xq_p - xq_m) / (2.0 * h)
            worst = max(worst, np.abs(fd - g.matrix[:, cj]).max())
        assert worst < 1e-6

    def test_zero_hamiltonian_zero_grad(self):
        model = ModelSpec(
            n=2,
            excited=np.array([True, False]),
            omega=np.array([1.0, SQRT2]),
            amplitudes=np.array([1.0]),
            epsilon=0.5,
            H1=Polynomial(2),
        )
        g = grad_Xq(model, pinned_vector(model), centered_box(1, 3))
        assert np.abs(g.matrix).max() == 0.0


class TestBOperator:
    def test_zero_iterate_gives_zero(self):
        model = henon_heiles()
        b = assemble_B(model, FourierVector(2, centered_box(1, 1)), centered_box(1, 4))
        assert np.abs(b.matrix).max() == 0.0

    @pytest.mark.parametrize("variant", ["damped", "chain_rule"])
    def test_rank_at_most_m(self, variant):
        for model, seed in ((henon_heiles(), 31), (fpu_beta(3, 0.5, excited=[True, True, False]), 32)):
            zp = random_gevrey_state(model, 2, seed=seed)
            b = assemble_B(model, zp, centered_box(model.m, 3), variant=variant)
            sv = np.linalg.svd(b.matrix, compute_uv=False)
            if sv[0] > 0:
                assert sv[model.m] < 1e-12 * sv[0]

    def test_entry_decay_bound(self):
        # |B(site, site')| <= (1/e) |k|_1 e^{-|k|_1^s} |grad_row(site')|_2
        model = henon_heiles()
        s = 0.5
        zp = random_gevrey_state(model, 4, seed=33, s=s)
        assert gevrey_log_sup(zp, s) <= 0.0
        box = centered_box(1, 4)
        b = assemble_B(model, zp, box, variant="damped")
        g = grad_Xq(model, pinned_vector(model, zp), box)
        basis = b.row_basis
        for i, row in enumerate(basis.sites()):
            l1 = sum(abs(v) for v in row.index)
            for j in range(basis.dim):
                grad_norm = np.linalg.norm(g.matrix[:, j])
                bound = (1.0 / np.e) * l1 * np.exp(-(l1**s)) * grad_norm + 1e-15
                assert abs(b.matrix[i, j]) <= bound

    def test_variants_differ_by_amplitude_weights(self):
        model = henon_heiles(amplitudes=[2.0])
        zp = random_gevrey_state(model, 2, seed=34)
        box = centered_box(1, 2)
        b_damped = assemble_B(model, zp, box, variant="damped")
        b_chain = assemble_B(model, zp, box, variant="chain_rule")
        # single excited mode: matrices are proportional, ratio (1/a)/(1/e)
        np.testing.assert_allclose(
            b_chain.matrix, b_damped.matrix * (np.e / 2.0), rtol=1e-12, atol=1e-295
        )


class TestAssembleL:
    def test_diagonal_values(self):
        model = henon_heiles()
        op = assemble_L(model, FourierVector(2, centered_box(1, 1)), np.array([1.0]), centered_box(1, 4))
        assert abs(op.entry(SiteIndex(1, (0,)), SiteIndex(1, (0,))) - SQRT2) < 1e-15
        assert abs(op.entry(SiteIndex(1, (2,)), SiteIndex(1, (2,))) - (SQRT2 - 2.0)) < 1e-15
        assert abs(op.entry(SiteIndex(0, (0,)), SiteIndex(0, (0,))) - 1.0) < 1e-15
        assert abs(op.entry(SiteIndex(0, (-1,)), SiteIndex(0, (-1,))) - 2.0) < 1e-15

    def test_unperturbed_is_diagonal(self):
        model = henon_heiles(epsilon=0.0)
        op = assemble_L(model, FourierVector(2, centered_box(1, 1)), np.array([1.0]), centered_box(1, 3))
        d = diagonal_values(model, np.array([1.0]), op.row_basis)
        np.testing.assert_array_equal(op.matrix, np.diag(d))

    def test_tangent_symmetry_on_random_states(self):
        for model, seed in ((henon_heiles(), 41), (fpu_beta(3, 1.0), 42)):
            zp = random_gevrey_state(model, 3, seed=seed)
            t = assemble_T(model, zp, model.omega_T * 1.003, centered_box(model.m, 3))
            assert np.abs(t.matrix - t.matrix.T).max() < 1e-12

    def test_resonant_exclusion_shrinks_dimension(self):
        model = henon_heiles()
        box = centered_box(1, 2)
        with_excl = SiteBasis(box, model.n, resonant_sites(model))
        without = SiteBasis(box, model.n)
        assert with_excl.dim == without.dim - model.m
