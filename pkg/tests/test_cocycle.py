"""Cocycle products, Lyapunov spectra, splittings, drifted recurrence."""

import math

import numpy as np
import pytest

from adicflow.cocycle import (
    DecayViolationError,
    fit_decay_rate,
    lyapunov_spectrum,
    oseledets_split,
    product,
    solve_drifted_recurrence,
)
from adicflow.diagram import (
    Diagram,
    DiagramEnsemble,
    WindowError,
    fibonacci_graph,
    graph_from_incidence,
    identity_graph,
    sample_diagram,
)

PHI = (1 + math.sqrt(5)) / 2
LOG_PHI = math.log(PHI)          # 0.4812118250596...
M23 = [[2, 1], [1, 3]]
LAM1 = (5 + math.sqrt(5)) / 2    # eigenvalues of M23
LAM2 = (5 - math.sqrt(5)) / 2


def fib_diagram(window=(-60, 60)):
    return Diagram.stationary(fibonacci_graph(), window)


def m23_diagram(window=(-60, 60)):
    return Diagram.stationary(graph_from_incidence(M23), window)


def sl2_ensemble():
    return DiagramEnsemble(
        [graph_from_incidence([[1, 1], [1, 2]]), graph_from_incidence([[2, 1], [1, 1]])],
        [0.5, 0.5])


class TestProduct:
    def test_empty_range_is_identity(self):
        P = product(fib_diagram(), 3, 3)
        assert P.matrix.tolist() == [[1, 0], [0, 1]]

    def test_fibonacci_fifth_power(self):
        # oracle: five explicit integer multiplications
        A = np.array([[1, 1], [1, 0]], dtype=object)
        expect = np.eye(2, dtype=object)
        for _ in range(5):
            expect = A @ expect
        assert expect.tolist() == [[8, 5], [5, 3]]
        P = product(fib_diagram(), 0, 5)
        assert P.exact and P.matrix.tolist() == [[8, 5], [5, 3]]

    def test_forward_backward_identity(self):
        d = fib_diagram()
        P = product(d, 5, 0) @ product(d, 0, 5)
        assert np.allclose(np.asarray(P.matrix, dtype=float), np.eye(2), atol=1e-10)

    def test_cocycle_identity_exact_integers(self):
        d = sample_diagram(sl2_ensemble(), seed=1, window=(-20, 30))
        for a, b, c in [(0, 4, 9), (-5, 0, 7), (2, 3, 4), (-10, -2, 11)]:
            lhs = product(d, b, c) @ product(d, a, b)
            rhs = product(d, a, c)
            assert lhs.matrix.tolist() == rhs.matrix.tolist()

    def test_window_enforced(self):
        with pytest.raises(WindowError):
            product(fib_diagram((0, 10)), 0, 11)

    def test_big_entry_switch_to_scaled_floats(self):
        d = fib_diagram((1, 1500))
        P = product(d, 0, 1500)
        assert not P.exact
        # top entry of A^n is F_{n+1}, about phi^{n+1} / sqrt(5)
        got = P.log_scale + math.log(np.abs(P.matrix).max())
        expect = 1501 * LOG_PHI - 0.5 * math.log(5)
        assert abs(got - expect) < 1e-6

    def test_duality_transport(self):
        # <A v, w> = <v, A^T w> exactly for the incidence matrices
        d = sample_diagram(sl2_ensemble(), seed=4, window=(0, 10))
        rng = np.random.default_rng(0)
        for n in range(1, 10):
            A = d.incidence_at(n).astype(float)
            v, w = rng.normal(size=2), rng.normal(size=2)
            assert abs((A @ v) @ w - v @ (A.T @ w)) < 1e-12


class TestSpectrum:
    def test_fibonacci_exponents(self):
        spec = lyapunov_spectrum(fib_diagram((1, 220)), n_max=200, base=0)
        assert abs(spec.exponents[0] - LOG_PHI) < 1e-6
        assert abs(spec.exponents[1] + LOG_PHI) < 1e-6
        assert np.all(spec.errors < 1e-6)

    def test_m23_exponents(self):
        spec = lyapunov_spectrum(m23_diagram((1, 220)), n_max=200, base=0)
        assert abs(spec.exponents[0] - math.log(LAM1)) < 1e-6
        assert abs(spec.exponents[1] - math.log(LAM2)) < 1e-6

    def test_identity_diagram_zero_spectrum(self):
        d = Diagram.stationary(identity_graph(2), (1, 60))
        spec = lyapunov_spectrum(d, n_max=50, base=0)
        assert np.allclose(spec.exponents, 0.0, atol=1e-12)

    def test_running_estimates_converge_one_over_n(self):
        spec = lyapunov_spectrum(fib_diagram((1, 220)), n_max=200, base=0)
        for i in (9, 49, 99, 199):
            assert abs(spec.running[i, 0] - LOG_PHI) <= 2.0 / (i + 1)

    def test_rejects_short_horizon(self):
        with pytest.raises(ValueError):
            lyapunov_spectrum(fib_diagram(), n_max=5)


class TestSplit:
    def test_fibonacci_unstable_is_perron_direction(self):
        split = oseledets_split(fib_diagram(), 0)
        assert split.dim_unstable == 1
        u = split.unstable[:, 0]
        target = np.array([PHI, 1.0]) / np.hypot(PHI, 1.0)
        angle = math.acos(min(1.0, abs(float(u @ target))))
        assert angle < 1e-6
        assert split.residual < 1e-6

    def test_m23_fully_unstable(self):
        split = oseledets_split(m23_diagram(), 0)
        assert split.dim_unstable == 2
        assert split.costable.shape == (2, 0)

    def test_identity_diagram_no_unstable(self):
        d = Diagram.stationary(identity_graph(2), (-70, 70))
        split = oseledets_split(d, 0)
        assert split.dim_unstable == 0

    def test_transpose_split_matches_for_symmetric_matrix(self):
        # the Fibonacci incidence matrix is symmetric, so both cocycles share
        # the Perron direction
        s = oseledets_split(fib_diagram(), 0, transpose=True)
        assert s.dim_unstable == 1
        target = np.array([PHI, 1.0]) / np.hypot(PHI, 1.0)
        assert abs(abs(float(s.unstable[:, 0] @ target)) - 1) < 1e-9

    def test_projection_is_oblique_identity_on_unstable(self):
        split = oseledets_split(fib_diagram(), 0)
        v = split.unstable[:, 0] * 3.7
        assert np.allclose(split.project_unstable(v), v, atol=1e-12)
        assert split.residual_norm(v) < 1e-12


class TestDecayFit:
    def test_clean_exponential(self):
        ns = np.arange(1, 40)
        rate, _ = fit_decay_rate(np.exp(-0.37 * ns), ns)
        assert abs(rate - 0.37) < 1e-9

    def test_all_zero_is_infinite_rate(self):
        rate, _ = fit_decay_rate(np.zeros(20))
        assert rate == math.inf

    def test_growth_is_negative_rate(self):
        ns = np.arange(1, 30)
        rate, _ = fit_decay_rate(np.exp(0.2 * ns), ns)
        assert rate < 0


class TestDriftedRecurrence:
    def exact_orbit(self, d, base, v, N):
        w = [np.asarray(v, float)]
        for j in range(1, N):
            w.append(d.incidence_at(base + j).astype(float) @ w[-1])
        return w

    def test_exact_orbit_recovers_vector(self):
        d = fib_diagram()
        v = np.array([PHI, 1.0]) / math.hypot(PHI, 1.0)
        w = self.exact_orbit(d, 0, v, 40)
        sol = solve_drifted_recurrence(d, w, theta=0.4, base=0)
        assert np.linalg.norm(sol.w_hat - v) < 1e-9
        assert sol.bound < 1e-6 * np.linalg.norm(w[-1])

    def test_noisy_orbit_close_to_clean_answer(self):
        # defects injected at rate e^{-0.4 n}; the recovered vector is within
        # 1e-3 of the clean one once the injection amplitude is 1e-4
        d = fib_diagram()
        rng = np.random.default_rng(42)
        v = np.array([PHI, 1.0]) / math.hypot(PHI, 1.0)
        clean = self.exact_orbit(d, 0, v, 60)
        amp = 1e-4
        noisy = [wj + amp * math.exp(-0.4 * j) * rng.normal(size=2)
                 for j, wj in enumerate(clean)]
        sol = solve_drifted_recurrence(d, noisy, theta=0.4, base=0)
        assert np.linalg.norm(sol.w_hat - v) < 1e-3
        assert sol.bound <= 10 * max(1.0, np.linalg.norm(noisy[0]))
        assert sol.split.residual_norm(sol.w_hat) < 1e-9

    def test_random_ensemble_solution_in_unstable_space(self):
        ens = sl2_ensemble()
        d = sample_diagram(ens, seed=7, window=(-120, 140))
        split = oseledets_split(d, 0)
        assert split.dim_unstable == 1  # determinant-1 letters: exponents +/- theta
        v = split.unstable[:, 0]
        rng = np.random.default_rng(3)
        clean = self.exact_orbit(d, 0, v, 60)
        noisy = [wj + math.exp(-0.4 * j) * rng.normal(size=2)
                 for j, wj in enumerate(clean)]
        sol = solve_drifted_recurrence(d, noisy, theta=0.4, base=0)
        assert sol.split.residual_norm(sol.w_hat) < 1e-9

    def test_declared_decay_violated(self):
        d = fib_diagram()
        rng = np.random.default_rng(0)
        w = [rng.normal(size=2) for _ in range(30)]  # defects do not decay
        with pytest.raises(DecayViolationError):
            solve_drifted_recurrence(d, w, theta=0.4, base=0)

    def test_uniqueness_under_summation_order(self):
        d = fib_diagram()
        rng = np.random.default_rng(5)
        v = np.array([PHI, 1.0]) / math.hypot(PHI, 1.0)
        clean = self.exact_orbit(d, 0, v, 50)
        noisy = [wj + math.exp(-0.4 * j) * rng.normal(size=2)
                 for j, wj in enumerate(clean)]
        sol = solve_drifted_recurrence(d, noisy, theta=0.4, base=0)
        reversed_sum = sum(reversed(sol.terms))
        assert np.linalg.norm(sol.w_hat - reversed_sum) < 1e-9

    def test_bound_stable_under_longer_window(self):
        d = fib_diagram()
        rng = np.random.default_rng(11)
        v = np.array([PHI, 1.0]) / math.hypot(PHI, 1.0)
        clean = self.exact_orbit(d, 0, v, 60)
        noisy = [wj + math.exp(-0.4 * j) * rng.normal(size=2)
                 for j, wj in enumerate(clean)]
        b60 = solve_drifted_recurrence(d, noisy, theta=0.4, base=0).bound
        b30 = solve_drifted_recurrence(d, noisy[:30], theta=0.4, base=0).bound
        assert 0.5 <= b60 / b30 <= 2.0
