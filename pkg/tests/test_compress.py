import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import cn, u_literal
from rihaczek_cs.compress import (
    CsProblem,
    PackedLagMatrix,
    SubsampledRs,
    build_u,
    compressive_eaf,
    compressive_estimates,
    lags_from_rs,
    measurement_matrix,
    measurement_operator,
    pack_lags,
    reconstruct_rs,
    rs_from_packed,
    sample_indices,
    sample_measurements,
    subsample_rs,
    symmetrize_eaf,
    symmetrized_rs_explicit,
    u_adjoint,
    u_apply,
    unpack_lags,
)
from rihaczek_cs.core import make_lag_support
from rihaczek_cs.spectra import ambiguity_function, masked_af, mvu_estimate

SUPPORTS = [(16, 1, 2), (24, 2, 1), (15, 2, 1), (128, 3, 7)]


def _mirror(a):
    n = a.shape[0]
    idx = np.arange(n)
    return np.conj(a[np.ix_(-idx % n, -idx % n)]) * np.exp(-2j * np.pi * np.outer(idx, idx) / n)


class TestUOperator:
    @pytest.mark.parametrize("args", SUPPORTS[:3])
    def test_dense_matrix_matches_entrywise_oracle(self, args):
        sup = make_lag_support(*args)
        u = build_u(sup)
        np.testing.assert_allclose(u, u_literal(sup.dm, sup.dl, sup.m_half, sup.l_half), atol=1e-14)

    @pytest.mark.parametrize("args", SUPPORTS)
    def test_scaled_unitary(self, args):
        sup = make_lag_support(*args)
        u = build_u(sup)
        np.testing.assert_allclose(u.conj().T @ u, np.eye(sup.s_prime) / sup.s_prime, atol=1e-13)

    @pytest.mark.parametrize("args", SUPPORTS)
    def test_fast_paths_match_dense(self, rng, args):
        sup = make_lag_support(*args)
        u = build_u(sup)
        r = cn(rng, sup.s_prime)
        a = cn(rng, sup.s_prime)
        np.testing.assert_allclose(u_apply(sup, r), u @ r, atol=1e-12)
        np.testing.assert_allclose(u_adjoint(sup, a), u.conj().T @ a, atol=1e-12)

    @given(st.sampled_from(SUPPORTS), st.integers(0, 2**32 - 1))
    def test_packed_and_subsampled_are_inverse(self, args, seed):
        sup = make_lag_support(*args)
        a = cn(np.random.default_rng(seed), sup.dm, sup.dl)
        back = lags_from_rs(rs_from_packed(PackedLagMatrix(a, sup))).a_mat
        np.testing.assert_allclose(back, a, atol=1e-12 * np.abs(a).max() * sup.s_prime)

    def test_vectorization_orders(self):
        sup = make_lag_support(16, 1, 2)
        a = np.arange(sup.s_prime)
        assert PackedLagMatrix.from_vec(a, sup).a_mat[1, 2] == 1 * sup.dl + 2
        assert SubsampledRs.from_vec(a, sup).r_mat[2, 1] == 1 * sup.dl + 2
        np.testing.assert_array_equal(SubsampledRs.from_vec(a, sup).vec(), a)


class TestSubsampling:
    @pytest.mark.parametrize("args", SUPPORTS)
    def test_subsampled_rs_is_scaled_windowed_estimate(self, rng, args):
        sup = make_lag_support(*args)
        x = cn(rng, sup.n_size)
        full = np.asarray(mvu_estimate(x, sup))
        r = subsample_rs(x, sup).r_mat
        np.testing.assert_allclose(r, sup.n_size * full[:: sup.dn, :: sup.dk], atol=1e-10)

    @pytest.mark.parametrize("args", SUPPORTS)
    def test_u_maps_subsampled_rs_to_lags(self, rng, args):
        sup = make_lag_support(*args)
        x = cn(rng, sup.n_size)
        a = pack_lags(masked_af(x, sup), sup).vec()
        np.testing.assert_allclose(build_u(sup) @ subsample_rs(x, sup).vec(), a, atol=1e-10)

    @pytest.mark.parametrize("args", SUPPORTS)
    def test_full_reconstruction_recovers_windowed_estimate(self, rng, args):
        sup = make_lag_support(*args)
        x = cn(rng, sup.n_size)
        rec = reconstruct_rs(subsample_rs(x, sup))
        np.testing.assert_allclose(np.asarray(rec), np.asarray(mvu_estimate(x, sup)), atol=1e-10)

    def test_pack_unpack(self, rng):
        sup = make_lag_support(16, 1, 2)
        af = np.asarray(ambiguity_function(cn(rng, 16)))
        out = np.asarray(unpack_lags(pack_lags(af, sup)))
        mask = out != 0
        assert mask.sum() == sup.s_prime
        np.testing.assert_array_equal(out[mask], af[mask])
        assert out[-1, -2] == af[15, 14]


class TestMeasurements:
    def test_indices_reproducible_and_distinct(self):
        a = sample_indices(128, 25, 7)
        np.testing.assert_array_equal(a, sample_indices(128, 25, 7))
        assert np.unique(a).size == 25
        with pytest.raises(ValueError):
            sample_indices(128, 0, 7)
        with pytest.raises(ValueError):
            sample_indices(128, 129, 7)

    def test_measurements_are_rows_of_u(self, rng):
        sup = make_lag_support(24, 2, 1)
        x = cn(rng, 24)
        prob = sample_measurements(x, sup, 7, 3)
        mat = measurement_matrix(prob)
        np.testing.assert_allclose(mat, build_u(sup)[prob.indices], atol=1e-14)
        np.testing.assert_allclose(mat @ subsample_rs(x, sup).vec(), prob.a_p, atol=1e-10)
        op = measurement_operator(prob)
        r = cn(rng, sup.s_prime)
        y = cn(rng, 7)
        np.testing.assert_allclose(op.matvec(r), mat @ r, atol=1e-12)
        np.testing.assert_allclose(op.rmatvec(y), mat.conj().T @ y, atol=1e-12)

    def test_problem_json_round_trip(self, rng):
        sup = make_lag_support(16, 1, 2)
        prob = sample_measurements(cn(rng, 16), sup, 5, np.random.SeedSequence(4, spawn_key=(1, 5)))
        back = CsProblem.from_json(prob.to_json())
        np.testing.assert_array_equal(back.indices, prob.indices)
        np.testing.assert_array_equal(back.a_p, prob.a_p)
        assert back.sup == sup
        assert json.loads(prob.to_json())["seed"]["spawn_key"] == [1, 5]
        assert prob.compression_factor == pytest.approx(sup.s_prime / 5)

    def test_problem_validation(self):
        sup = make_lag_support(16, 1, 2)
        with pytest.raises(ValueError):
            CsProblem(sup, np.array([1, 1]), np.zeros(2))
        with pytest.raises(ValueError):
            CsProblem(sup, np.array([sup.s_prime]), np.zeros(1))
        with pytest.raises(ValueError):
            CsProblem(sup, np.array([0, 1]), np.zeros(3))

    def test_lag_pairs(self):
        sup = make_lag_support(16, 1, 2)
        prob = CsProblem(sup, np.array([0, sup.dl + 2]), np.zeros(2))
        assert prob.lag_pairs() == [(-1, -2), (0, 0)]


class TestSymmetrization:
    @given(st.integers(3, 20), st.integers(0, 2**32 - 1))
    def test_is_an_orthogonal_projection(self, n, seed):
        rng = np.random.default_rng(seed)
        a = cn(rng, n, n)
        s = np.asarray(symmetrize_eaf(a))
        np.testing.assert_allclose(np.asarray(symmetrize_eaf(s)), s, atol=1e-12)
        np.testing.assert_allclose(_mirror(s), s, atol=1e-12)
        # the residual is orthogonal (real inner product) to every symmetric matrix
        t = np.asarray(symmetrize_eaf(cn(rng, n, n)))
        assert abs(np.real(np.vdot(a - s, t))) < 1e-10 * np.linalg.norm(a) * np.linalg.norm(t)

    @given(st.integers(3, 20), st.integers(0, 2**32 - 1))
    def test_never_moves_away_from_a_symmetric_target(self, n, seed):
        rng = np.random.default_rng(seed)
        target = np.asarray(ambiguity_function(cn(rng, n)))
        est = target + cn(rng, n, n)
        assert np.linalg.norm(np.asarray(symmetrize_eaf(est)) - target) <= np.linalg.norm(est - target) + 1e-12

    def test_af_is_fixed_point(self, rng):
        af = np.asarray(ambiguity_function(cn(rng, 12)))
        np.testing.assert_allclose(np.asarray(symmetrize_eaf(af)), af, atol=1e-12)

    @pytest.mark.parametrize("args", [(15, 2, 1), (35, 3, 2), (9, 1, 1)])
    def test_explicit_sum_matches_full_grid_path(self, rng, args):
        sup = make_lag_support(*args)
        assert (sup.dm, sup.dl) == (2 * sup.m_half + 1, 2 * sup.l_half + 1)
        r_hat = SubsampledRs.from_vec(cn(rng, sup.s_prime), sup)
        via_grid = np.asarray(mvu_estimate_symmetrized(r_hat))
        np.testing.assert_allclose(np.asarray(symmetrized_rs_explicit(r_hat)), via_grid, atol=1e-12)


def mvu_estimate_symmetrized(r_hat):
    from rihaczek_cs.core import symplectic_dft

    return symplectic_dft(symmetrize_eaf(compressive_eaf(r_hat)))


class TestCompressiveEstimates:
    def test_noncompressive_case_reproduces_windowed_estimate(self, rng):
        sup = make_lag_support(16, 1, 2)
        x = cn(rng, 16)
        res = compressive_estimates(x, sup, sup.s_prime, 0)
        ref = np.asarray(mvu_estimate(x, sup))
        assert np.linalg.norm(np.asarray(res.plain) - ref) <= 1e-8 * np.linalg.norm(ref)
        assert np.linalg.norm(np.asarray(res.symmetrized) - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_measurements_are_honoured(self, rng):
        sup = make_lag_support(24, 2, 1)
        x = cn(rng, 24)
        res = compressive_estimates(x, sup, 8, 11)
        a_hat = pack_lags(compressive_eaf(res.r_hat), sup).vec()
        np.testing.assert_allclose(a_hat[res.problem.indices], res.problem.a_p, atol=1e-8 * np.abs(res.problem.a_p).max())
        assert res.solution.feasibility < 1e-8
