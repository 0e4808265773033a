"""Canonical correlation alignment: whitening, solutions, ridge selection."""

import numpy as np
import pytest

from fuselab import (
    GammaSelectionError,
    ShapeError,
    ValidationError,
    apply_plan,
    cca_plan,
    default_gamma,
    forward,
    gamma_grid,
    inv_sqrt,
    select_gamma,
    solve_cca,
    solve_layers,
)
from fuselab.activations import ActivationMatrix, scatter
from fuselab.cca import GAMMA_GRID_COEFFS, build_transform

from _helpers import permuted_twin, random_model, random_monomial_plan


def _mat(values, layer_index=0):
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean(axis=0)
    return ActivationMatrix(values - mu, mu, layer_index, values.shape[0])


def _random_spd(rng, n, jitter=0.1):
    a = rng.normal(size=(n, n))
    return a @ a.T + jitter * np.eye(n)


class TestInvSqrt:
    def test_diagonal_case(self):
        # diag(4, 9)^(-1/2) is diag(1/2, 1/3)
        out = inv_sqrt(np.diag([4.0, 9.0]))
        np.testing.assert_allclose(out, np.diag([0.5, 1.0 / 3.0]), atol=1e-14)

    def test_defining_property(self, rng):
        for _ in range(20):
            s = _random_spd(rng, 5)
            r = inv_sqrt(s)
            np.testing.assert_allclose(r @ s @ r, np.eye(5), atol=1e-9)

    def test_square_equals_inverse(self, rng):
        s = _random_spd(rng, 4)
        r = inv_sqrt(s)
        np.testing.assert_allclose(r @ r, np.linalg.inv(s), atol=1e-9)

    def test_ridge_shifts_spectrum(self, rng):
        s = _random_spd(rng, 4)
        np.testing.assert_allclose(
            inv_sqrt(s, gamma=0.7), inv_sqrt(s + 0.7 * np.eye(4)), atol=1e-12
        )

    def test_rank_deficient_stays_finite(self):
        s = np.zeros((3, 3))
        s[0, 0] = 1.0
        out = inv_sqrt(s, gamma=0.0)
        assert np.all(np.isfinite(out))

    def test_input_checks(self, rng):
        with pytest.raises(ShapeError):
            inv_sqrt(np.zeros((2, 3)))
        with pytest.raises(ValidationError):
            inv_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(ValidationError):
            inv_sqrt(np.eye(2), gamma=-1.0)
        with pytest.raises(ValidationError):
            inv_sqrt(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestSolveCca:
    def test_self_pair_is_identity(self, rng):
        a = _mat(rng.normal(size=(200, 6)))
        sol = solve_cca(scatter(a, a, gamma=0.0))
        np.testing.assert_allclose(sol.correlations, 1.0, atol=1e-8)
        np.testing.assert_allclose(sol.p_a, sol.p_b, atol=1e-8)
        t = build_transform(sol, 0)
        np.testing.assert_allclose(t.forward, np.eye(6), atol=1e-6)

    def test_projections_whiten_the_scatter(self, rng):
        for _ in range(10):
            a = _mat(rng.normal(size=(300, 5)))
            b = _mat(rng.normal(size=(300, 5)))
            stats = scatter(a, b, gamma=0.0)
            sol = solve_cca(stats)
            np.testing.assert_allclose(
                sol.p_a.T @ stats.s_aa @ sol.p_a, np.eye(5), atol=1e-8
            )
            np.testing.assert_allclose(
                sol.p_b.T @ stats.s_bb @ sol.p_b, np.eye(5), atol=1e-8
            )

    def test_cross_scatter_diagonalized(self, rng):
        a = _mat(rng.normal(size=(300, 4)))
        b = _mat(rng.normal(size=(300, 4)))
        stats = scatter(a, b, gamma=0.0)
        sol = solve_cca(stats)
        cross = sol.p_a.T @ stats.s_ab @ sol.p_b
        np.testing.assert_allclose(cross, np.diag(sol.correlations), atol=1e-8)

    def test_correlations_sorted_and_bounded(self, rng):
        a = _mat(rng.normal(size=(100, 7)))
        b = _mat(rng.normal(size=(100, 7)))
        sol = solve_cca(scatter(a, b, gamma=0.0))
        assert np.all(sol.correlations >= 0.0)
        assert np.all(sol.correlations <= 1.0)
        assert np.all(np.diff(sol.correlations) <= 1e-12)

    def test_shared_signal_found(self, rng):
        z = rng.normal(size=(400, 1))
        a = _mat(np.hstack([z, rng.normal(size=(400, 1))]))
        b = _mat(np.hstack([rng.normal(size=(400, 1)), z]))
        sol = solve_cca(scatter(a, b, gamma=0.0))
        np.testing.assert_allclose(sol.correlations[0], 1.0, atol=1e-10)
        assert sol.correlations[1] < 0.3

    def test_two_dim_matches_angle_grid(self, rng):
        # brute-force oracle: scan unit directions on both sides and take
        # the best absolute correlation of the projected samples
        def grid_best(xa, xb, steps=600):
            angles = np.linspace(0.0, np.pi, steps, endpoint=False)
            dirs = np.stack([np.cos(angles), np.sin(angles)])
            ya = xa @ dirs
            yb = xb @ dirs
            ya = ya - ya.mean(axis=0)
            yb = yb - yb.mean(axis=0)
            ya /= np.linalg.norm(ya, axis=0)
            yb /= np.linalg.norm(yb, axis=0)
            return float(np.max(np.abs(ya.T @ yb)))

        for trial in range(3):
            xa = rng.normal(size=(250, 2))
            xb = 0.5 * xa @ rng.normal(size=(2, 2)) + rng.normal(size=(250, 2))
            sol = solve_cca(scatter(_mat(xa), _mat(xb), gamma=0.0))
            assert abs(sol.correlations[0] - grid_best(xa, xb)) < 1e-3

    def test_deterministic(self, rng):
        a = _mat(rng.normal(size=(80, 5)))
        b = _mat(rng.normal(size=(80, 5)))
        stats = scatter(a, b, gamma=1e-3)
        s1 = solve_cca(stats)
        s2 = solve_cca(stats)
        np.testing.assert_array_equal(s1.p_a, s2.p_a)
        np.testing.assert_array_equal(s1.p_b, s2.p_b)


class TestTransformRecovery:
    def test_invertible_mixing_recovered_exactly(self, rng):
        # when b's features are an invertible recombination of a's,
        # the aligned transform undoes that recombination
        for _ in range(10):
            n = 5
            xa = rng.normal(size=(400, n))
            g = rng.normal(size=(n, n)) + 2.0 * np.eye(n)
            xb = xa @ g
            sol = solve_cca(scatter(_mat(xa), _mat(xb), gamma=0.0))
            t = build_transform(sol, 0)
            np.testing.assert_allclose(t.forward @ g.T, np.eye(n), atol=1e-6)
            # applying the transform to b's features restores a's
            np.testing.assert_allclose(
                (xb - xb.mean(axis=0)) @ t.forward.T,
                xa - xa.mean(axis=0),
                atol=1e-6,
            )

    def test_plan_recovers_monomially_mixed_twin(self, rng):
        model = random_model(3, (10, 10), 4, seed=5)
        plan = random_monomial_plan((10, 10), seed=6)
        twin = apply_plan(model, plan)
        probes = rng.normal(size=(800, 3))
        recovered = apply_plan(twin, cca_plan(model, twin, probes, gamma=1e-8))
        np.testing.assert_allclose(
            forward(recovered, probes), forward(model, probes), atol=1e-6
        )


class TestGammaHandling:
    def test_default_gamma_formula(self):
        s = np.diag([2.0, 4.0])
        assert default_gamma(s, s) == pytest.approx(1e-3 * 3.0)

    def test_solve_layers_records_gamma(self, small_pair, small_task):
        train_ds, _ = small_task
        a, b = small_pair
        probes = train_ds.features[:100]
        sols = solve_layers(a, b, probes, gamma=0.25)
        assert len(sols) == 2
        assert all(s.gamma == 0.25 for s in sols)
        auto = solve_layers(a, b, probes)
        assert all(s.gamma > 0 for s in auto)

    def test_gamma_grid_scales(self, small_pair, small_task):
        train_ds, _ = small_task
        a, b = small_pair
        grid = gamma_grid(a, b, train_ds.features[:100])
        assert len(grid) == len(GAMMA_GRID_COEFFS)
        ratios = np.diff(np.log10(grid))
        np.testing.assert_allclose(ratios, 1.0, atol=1e-9)

    def test_select_gamma_tie_goes_to_larger(self, small_task):
        # a permuted twin merges back to the reference for any tiny ridge, so
        # the candidates score identically and the largest must win
        train_ds, _ = small_task
        model = random_model(train_ds.dim, (12, 12), train_ds.num_classes, seed=3)
        _, twin = permuted_twin(model, seed=4)
        picked = select_gamma(
            [1e-9, 1e-8, 1e-7], [(model, twin)], train_ds.features[:200], train_ds
        )
        assert picked == 1e-7

    def test_select_gamma_rejects_empty(self, small_pair, small_task):
        train_ds, _ = small_task
        with pytest.raises(GammaSelectionError):
            select_gamma([], [small_pair], train_ds.features[:50], train_ds)
        with pytest.raises(GammaSelectionError):
            select_gamma([1e-3], [], train_ds.features[:50], train_ds)

    def test_select_gamma_all_failures_raise(self, small_pair, small_task):
        train_ds, _ = small_task
        with pytest.raises(GammaSelectionError):
            select_gamma([-1.0], [small_pair], train_ds.features[:50], train_ds)
