import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from conftest import rand_simplex, random_model
from optenet.linear import (
    LinearKernelModel,
    SingularLambdaError,
    apply_O,
    build_bridge,
    build_obs_bases,
    build_state_bases,
    embed_tabular,
)
from optenet.model import InvalidModelError, Policy, TabularModel, belief_table, interventional_law, obs_given_sigma


def in_convex_hull(columns: np.ndarray, point: np.ndarray) -> bool:
    n = columns.shape[1]
    res = linprog(
        np.zeros(n),
        A_eq=np.vstack([columns, np.ones(n)]),
        b_eq=np.append(point, 1.0),
        bounds=(0, None),
        method="highs",
    )
    return res.status == 0


def random_linear_model(rng, H=3, S=4, O=5, A=2, d_u=2, d_v=1, d_q=4):  # noqa: E741
    """Defaults give independent state-basis columns and an injective emission."""
    u = rand_simplex(rng, (S, d_u), 0, 0.1)
    v = rng.random((S, d_v))
    v /= v.sum(axis=1, keepdims=True)  # rows sum to one
    M = rand_simplex(rng, (H - 1, A, d_u, d_v), 2, 0.1)  # columns of M sum to one
    q = rand_simplex(rng, (O, d_q), 0, 0.1)
    g = rand_simplex(rng, (H, d_q, S), 1, 0.1)
    mu = u @ rand_simplex(rng, d_u, 0)
    return LinearKernelModel(u, v, q, M, g, mu, rng.random((O, A)))


class TestEmbedding:
    def test_one_point_spaces(self):
        m = TabularModel(mu=[1.0], T=np.ones((1, 1, 1, 1)), E=np.ones((2, 1, 1)), r=[[0.5]])
        lk = embed_tabular(m)
        for arr in (lk.u, lk.v, lk.q, lk.M[0, 0], lk.g[0]):
            np.testing.assert_array_equal(arr, [[1.0]])

    def test_exact_reconstruction(self, rng):
        m = random_model(rng, H=3, S=2, O=3)
        back = embed_tabular(m).to_tabular()
        assert np.max(np.abs(back.T - m.T)) == 0
        assert np.max(np.abs(back.E - m.E)) == 0
        lk = embed_tabular(m)
        assert lk.u.shape[1] == lk.v.shape[1] == 2 and lk.q.shape[1] == 3

    def test_identity_emission(self, rng):
        m = random_model(rng, S=3, O=3)
        m = TabularModel(m.mu, m.T, np.broadcast_to(np.eye(3), m.E.shape), m.r)
        for g in embed_tabular(m).g:
            np.testing.assert_array_equal(g, np.eye(3))

    def test_invalid_linear_model(self, rng):
        lk = random_linear_model(rng)
        with pytest.raises(InvalidModelError):
            LinearKernelModel(lk.u, lk.v, lk.q * 2, lk.M, lk.g, lk.mu, lk.r)
        with pytest.raises(InvalidModelError):
            LinearKernelModel(lk.u, lk.v, lk.q, lk.M, lk.g, np.array([1.5, -0.5, 0.0, 0.0]), lk.r)


class TestBases:
    def test_one_hot_state_bases(self, rng):
        psi = build_state_bases(embed_tabular(random_model(rng, S=3))).psi
        np.testing.assert_array_equal(psi, np.eye(3))

    def test_single_column(self, rng):
        lk = random_linear_model(rng, d_u=1, d_v=1)
        psi = build_state_bases(lk).psi
        assert psi.shape[1] == 1
        np.testing.assert_allclose(psi[:, 0], lk.u[:, 0])

    def test_transition_columns_in_hull(self, rng):
        lk = random_linear_model(rng, S=3, d_u=2, d_v=2)
        psi = build_state_bases(lk).psi
        assert psi.shape[1] <= lk.u.shape[1] * (lk.v.shape[1] + 1)
        m = lk.to_tabular()
        for h, s, a in itertools.product(range(m.H - 1), range(m.S), range(m.A)):
            assert in_convex_hull(psi, m.T[h, :, s, a])

    def test_one_hot_obs_bases(self, rng):
        phi = build_obs_bases(embed_tabular(random_model(rng, O=2))).phi
        np.testing.assert_array_equal(phi, np.eye(8))

    def test_single_obs_column_is_product(self, rng):
        lk = random_linear_model(rng, d_q=1)
        phi = build_obs_bases(lk).phi
        q = lk.q[:, 0]
        np.testing.assert_allclose(phi[:, 0], np.einsum("x,y,z->xyz", q, q, q).ravel())

    def test_triple_law_in_hull(self, rng):
        lk = random_linear_model(rng, H=3, O=3, d_q=2, S=3)
        m = lk.to_tabular()
        phi = build_obs_bases(lk).phi
        pol = Policy.random(3, m.O, m.A, rng)
        # the last step carries the dummy observation, which need not lie in span(q)
        for a, a2 in itertools.product(range(m.A), repeat=2):
            assert in_convex_hull(phi, interventional_law(m, pol, 2, a, a2).ravel())


class TestObservationOperator:
    def test_initial_marginal(self, rng):
        m = random_model(rng)
        np.testing.assert_allclose(apply_O(m, 1, m.mu), m.E[0] @ m.mu)
        np.testing.assert_allclose(apply_O(m, 1, m.mu).sum(), 1.0)

    def test_identity(self, rng):
        m = random_model(rng, S=3, O=3)
        m = TabularModel(m.mu, m.T, np.broadcast_to(np.eye(3), m.E.shape), m.r)
        f = rng.normal(size=3)
        np.testing.assert_array_equal(apply_O(m, 2, f), f)

    def test_basis_images_are_nu(self, rng):
        lk = random_linear_model(rng)
        m = lk.to_tabular()
        bases = build_state_bases(lk)
        br = build_bridge(m, bases)
        for h in range(1, m.H + 1):
            for i in range(bases.d_s):
                np.testing.assert_allclose(apply_O(m, h, bases.psi[:, i]), br.nu[h - 1][:, i], atol=1e-15)


class TestBridge:
    def test_identity_emission(self, rng):
        m = random_model(rng, S=3, O=3)
        m = TabularModel(m.mu, m.T, np.broadcast_to(np.eye(3), m.E.shape), m.r)
        br = build_bridge(m)
        for h in range(m.H):
            np.testing.assert_allclose(br.Lambda[h], np.eye(3))
            np.testing.assert_allclose(br.Z[h], np.eye(3))
        assert br.gamma == 3

    def test_rank_deficient(self, rng):
        m = random_model(rng, S=2, O=3)
        E = m.E.copy()
        E[1, :, 1] = E[1, :, 0]
        with pytest.raises(SingularLambdaError) as info:
            build_bridge(TabularModel(m.mu, m.T, E, m.r))
        assert abs(info.value.min_eig) < 1e-10

    def test_matches_pseudo_inverse(self, rng):
        m = random_model(rng, S=2, O=3)
        br = build_bridge(m)
        for h in range(m.H):
            # with one-hot bases and the delta kernel the bridge is the pseudo-inverse
            np.testing.assert_allclose(br.Z[h], np.linalg.pinv(m.E[h]), atol=1e-12)
            np.testing.assert_allclose(br.Lambda[h], m.E[h].T @ m.E[h], atol=1e-15)
            np.testing.assert_allclose(br.Z[h] @ m.E[h], np.eye(2), atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), S=st.integers(1, 3), extra=st.integers(0, 2))
    def test_left_inverse_and_norm_bound(self, seed, S, extra):
        rng = np.random.default_rng(seed)
        m = random_model(rng, H=3, S=S, O=S + extra, A=2)
        br = build_bridge(m)
        for h in range(m.H):
            f = br.psi @ rng.normal(size=br.d_s)
            assert np.abs(br.Z[h] @ (m.E[h] @ f) - f).sum() <= 1e-9
            assert np.abs(br.Z[h]).sum(axis=0).max() <= br.gamma + 1e-9

    def test_gamma_formula(self, rng):
        m = random_model(rng, S=2, O=3)
        br = build_bridge(m)
        cols = [np.abs(np.linalg.inv(m.E[h].T @ m.E[h])).sum(axis=0).max() for h in range(m.H)]
        assert br.gamma == pytest.approx(2 * max(cols), rel=1e-12)

    def test_conditional_identity(self, rng):
        m = random_model(rng, H=3, S=2, O=3)
        br = build_bridge(m)
        for h in (2, 3):
            prev = belief_table(m, h - 1)  # p(tau_bar_{h-1}, s_{h-1})
            state = np.einsum("...s,tsa->...at", prev, m.T[h - 2])  # p(sigma, s_h)
            obs = obs_given_sigma(m, h)  # p(sigma, o_h)
            np.testing.assert_allclose(np.einsum("to,...o->...t", br.Z[h - 1], obs), state, atol=1e-9)

    def test_smoothing_kernel(self, rng):
        m = random_model(rng, S=2, O=3)
        Kt = 0.5 * np.eye(3) + 0.5 / 3
        br = build_bridge(m, kernel_tilde=Kt)
        for h in range(m.H):
            np.testing.assert_allclose(br.Z[h] @ m.E[h], np.eye(2), atol=1e-9)
            assert np.abs(br.Z[h]).sum(axis=0).max() <= br.gamma + 1e-9

    def test_dependent_basis_columns_are_singular(self, rng):
        # six basis columns in a three-dimensional state space cannot be independent
        lk = random_linear_model(rng, S=3, d_u=2, d_v=2)
        with pytest.raises(SingularLambdaError):
            build_bridge(lk.to_tabular(), build_state_bases(lk))

    def test_kernel_bound_enforced(self, rng):
        with pytest.raises(ValueError):
            build_bridge(random_model(rng, O=3), kernel_tilde=2 * np.eye(3))

    def test_linear_model_bases(self, rng):
        lk = random_linear_model(rng)
        m = lk.to_tabular()
        br = build_bridge(m, build_state_bases(lk))
        assert br.d_s == 2  # with one v column the products duplicate the u columns
        for h in range(m.H):
            np.testing.assert_allclose(br.Z[h] @ m.E[h] @ br.psi, br.psi, atol=1e-9)

    def test_report(self, rng):
        text = build_bridge(random_model(rng)).report()
        assert "gamma" in text and "step 3" in text
