import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from optqueue.beliefs import (
    BeliefTrajectory,
    belief_decomposition,
    discipline_waiting_times,
    entry_belief,
    fcfs_belief_ode,
    fcfs_rhs,
    fcfs_waiting_times,
    discipline_curves_csv,
    discipline_wait_curves,
    discipline_initial_slopes,
    discipline_comparison_parameters,
    tagged_chain,
    tagged_entry_belief,
    three_state_dynamics,
    three_state_setup,
)
from optqueue.design import CutoffPolicy, cutoff_distribution, discipline_rates
from optqueue.errors import NumericalError, ValidationError
from optqueue.incentives import max_ratio_increase
from optqueue.ode import integrate
from optqueue.process import make_mmc

from conftest import regular_processes

T = np.linspace(0.0, 10.0, 512)


def literal_three_state_rhs(lam, mu, q21, q22, x2, z21, z22):
    """Belief ODEs of the two-agent queue written out term by term; order (1,1), (2,1), (2,2)."""
    e21 = q21 + lam * x2 * z21
    e22 = q22 + lam * x2 * z22

    def f(g):
        g11, g21, g22 = g
        exit_mix = g11 * mu + g21 * e21 + g22 * e22
        return np.array(
            [
                -g11 * (mu + lam) + g22 * q21 + g21 * q22 + g11 * exit_mix,
                -g21 * (mu + lam * x2 * (1 - z22)) + g22 * lam * x2 * z21 + g11 * lam + g21 * exit_mix,
                -g22 * (mu + lam * x2) + g22 * exit_mix,
            ]
        )

    return f


def literal_three_state_tau_sigma(lam, mu, q21, q22, x2, z21, z22):
    """First-step systems for waits and service probabilities."""
    A = np.array(
        [
            [mu + lam, -lam, 0.0],
            [-q22, mu + lam * x2 * z21, 0.0],
            [-q21, -lam * x2 * z21, mu + lam * x2],
        ]
    )
    tau = np.linalg.solve(A, np.ones(3))
    sigma = np.linalg.solve(A, np.array([mu, q21, q22]))
    return tau, sigma


def expm_fcfs(process, K, g0, t_grid):
    """Survival-weighted beliefs by matrix exponential, then normalized."""
    A = np.zeros((K, K))
    for l in range(1, K + 1):
        A[l - 1, l - 1] = -process.mu[l]
        if l < K:
            A[l - 1, l] = process.mu[l]
    out = np.array([expm(A * t) @ g0 for t in t_grid])
    return out / out.sum(axis=1, keepdims=True)


class TestFcfsWaits:
    def test_values(self):
        np.testing.assert_array_equal(fcfs_waiting_times(make_mmc(1, 1, 1, 2), 2), [1, 2])
        np.testing.assert_allclose(fcfs_waiting_times(make_mmc(1, 2, 3, 5), 3), [0.5] * 3)
        np.testing.assert_array_equal(fcfs_waiting_times(make_mmc(1, 4, 1, 1), 1), [0.25])
        with pytest.raises(ValidationError):
            fcfs_waiting_times(make_mmc(1, 1, 1, 2), 3)

    @settings(max_examples=50, deadline=None)
    @given(regular_processes(max_k=10))
    def test_nondecreasing(self, proc):
        tau = fcfs_waiting_times(proc, proc.k_max)
        assert np.all(np.diff(tau) >= -1e-12 * tau.max())


class TestEntryBelief:
    def test_values(self):
        p = make_mmc(1, 1, 1, 2)
        np.testing.assert_allclose(entry_belief(p, CutoffPolicy(2)), [0.5, 0.5], atol=1e-15)
        np.testing.assert_array_equal(entry_belief(p, CutoffPolicy(1)), [1.0])
        np.testing.assert_allclose(entry_belief(p, CutoffPolicy(2, 0.5)), [2 / 3, 1 / 3], atol=1e-15)
        with pytest.raises(ValidationError):
            entry_belief(p, CutoffPolicy(0))

    @settings(max_examples=80, deadline=None)
    @given(regular_processes(max_k=10), st.floats(0.05, 1.0), st.data())
    def test_mu_weighted_form_and_ratios(self, proc, x, data):
        K = data.draw(st.integers(1, proc.k_max))
        g0 = entry_belief(proc, CutoffPolicy(K, x))
        p = cutoff_distribution(proc, K, x)
        w = p[1:] * proc.mu[1 : K + 1]
        np.testing.assert_allclose(g0, w / w.sum(), rtol=1e-12, atol=1e-15)
        # Boundary ratios r0_l = lam~_{l-1} / mu_{l-1}.
        lt = proc.lam[:K] * CutoffPolicy(K, x).entry_probs(proc.k_max)[:K]
        for l in range(2, K + 1):
            if g0[l - 2] > 1e-12:
                assert g0[l - 1] / g0[l - 2] == pytest.approx(lt[l - 1] / proc.mu[l - 1], rel=1e-12)


class TestFcfsOde:
    def test_closed_form(self):
        p = make_mmc(1, 1, 1, 2)
        start = time.perf_counter()
        traj = fcfs_belief_ode(p, CutoffPolicy(2), T)
        assert time.perf_counter() - start < 1.0
        assert np.max(np.abs(traj.r[:, 1] - 1 / (1 + T))) <= 1e-6
        assert np.max(np.abs(traj.residual_wait - (3 + T) / (2 + T))) <= 1e-6
        np.testing.assert_array_equal(traj.serve_prob, 1.0)
        assert np.all(np.isnan(traj.r[:, 0]))

    def test_r_rhs_matches_ratio_odes(self):
        # r_l' = r_l (mu_{l-1} - mu_l - mu_{l-1} r_l + mu_l r_{l+1}), r_{K+1} = 0.
        rng = np.random.default_rng(7)
        proc = make_mmc(0.8, 1.0, 2, 5)
        K = 5
        f = fcfs_rhs(proc, K)
        mu = proc.mu
        for _ in range(20):
            g = rng.dirichlet(np.ones(K))
            gd = f(g)
            r = np.concatenate([[np.nan], g[1:] / g[:-1], [0.0]])
            for l in range(2, K + 1):
                rdot = (gd[l - 1] * g[l - 2] - g[l - 1] * gd[l - 2]) / g[l - 2] ** 2
                expect = r[l - 1] * (mu[l - 1] - mu[l] - mu[l - 1] * r[l - 1] + mu[l] * r[l])
                assert rdot == pytest.approx(expect, rel=1e-10, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(regular_processes(max_k=8), st.floats(0.05, 1.0), st.data())
    def test_against_expm(self, proc, x, data):
        K = data.draw(st.integers(1, proc.k_max))
        grid = np.linspace(0.0, 10.0 / proc.mu[1], 33)
        traj = fcfs_belief_ode(proc, CutoffPolicy(K, x), grid)
        ref = expm_fcfs(proc, K, entry_belief(proc, CutoffPolicy(K, x)), grid)
        np.testing.assert_allclose(traj.gamma, ref, atol=1e-7)
        np.testing.assert_allclose(traj.gamma.sum(axis=1), 1.0, atol=1e-9)

    def test_payoffs_and_csv(self):
        traj = fcfs_belief_ode(make_mmc(1, 1, 1, 2), CutoffPolicy(2), np.linspace(0, 1, 3), V=1.5, C=1)
        np.testing.assert_allclose(traj.utility, 1.5 - traj.residual_wait)
        text = traj.to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "t,gamma_1,gamma_2,W,S,U"
        assert len(lines) == 4
        assert float(lines[1].split(",")[3]) == 1.5

    def test_default_grid(self):
        traj = fcfs_belief_ode(make_mmc(1, 2, 1, 2), CutoffPolicy(2))
        assert traj.t_grid.size == 512 and traj.t_grid[-1] == pytest.approx(5.0)

    def test_integrator(self):
        grid = np.linspace(0, 2, 5)
        y = integrate(lambda v: -v, np.array([1.0]), grid)
        np.testing.assert_allclose(y[:, 0], np.exp(-grid), atol=1e-9)
        with pytest.raises(NumericalError), np.errstate(over="ignore", invalid="ignore"):
            integrate(lambda v: v**2, np.array([1.0]), np.array([0.0, 2.0]))
        with pytest.raises(ValueError):
            integrate(lambda v: v, np.array([1.0]), np.array([1.0, 0.0]))


class TestDecomposition:
    def test_closed_forms(self):
        dec = belief_decomposition(make_mmc(1, 1, 1, 2), CutoffPolicy(2), T)
        np.testing.assert_allclose(dec.overall, (1 + T) / (2 + T), atol=1e-6)
        np.testing.assert_allclose(dec.bottom, 1 / (2 + T), atol=1e-6)
        np.testing.assert_allclose(dec.top, 0.5 + 0.5 * T / (1 + T), atol=1e-6)
        assert dec.overall[0] == dec.top[0] == dec.bottom[0] == 0.5
        assert np.all(np.diff(dec.overall) > 0) and np.all(np.diff(dec.bottom) < 0)
        assert dec.to_csv().startswith("t,overall,top,bottom\n")

    def test_overall_matches_position_belief(self):
        proc = make_mmc(1.2, 1.0, 2, 6)
        grid = np.linspace(0, 5, 21)
        dec = belief_decomposition(proc, CutoffPolicy(6, 0.7), grid)
        traj = fcfs_belief_ode(proc, CutoffPolicy(6, 0.7), grid)
        np.testing.assert_allclose(dec.overall, traj.gamma[:, 0], atol=1e-8)


class TestDisciplineWaits:
    def test_fcfs_waits_depend_on_position_only(self):
        proc = make_mmc(0.9, 1.0, 2, 5)
        table = discipline_waiting_times(proc, CutoffPolicy(5), discipline_rates(proc, "FCFS", 5))
        for k in range(1, 6):
            for l in range(1, k + 1):
                assert table.tau[k, l] == pytest.approx(l / proc.mu[l], rel=1e-12)
                assert table.sigma[k, l] == pytest.approx(1.0, abs=1e-12)
        assert np.isnan(table.tau[1, 2]) and np.isnan(table.tau[0, 0])

    def test_siro(self):
        proc = make_mmc(1, 1, 1, 2)
        pol = CutoffPolicy(2).to_policy(2)
        table = discipline_waiting_times(proc, pol, discipline_rates(proc, "SIRO", 2))
        assert table.tau[1, 1] == pytest.approx(4 / 3, abs=1e-14)
        assert table.tau[2, 1] == pytest.approx(5 / 3, abs=1e-14)
        assert table.tau[2, 2] == pytest.approx(5 / 3, abs=1e-14)

    def test_against_literal_systems(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            lam, mu = rng.uniform(0.2, 3), rng.uniform(0.2, 3)
            share = rng.uniform()
            x2 = rng.choice([0.0, rng.uniform(0.1, 1)])
            z21 = rng.uniform() if x2 > 0 else 0.0
            z22 = 1 - z21 if x2 > 0 else 0.0
            params = (lam, mu, share * mu, (1 - share) * mu, x2, z21, z22)
            proc, pol, disc = three_state_setup(*params)
            chain = tagged_chain(proc, pol, disc)
            order = [chain.index(1, 1), chain.index(2, 1), chain.index(2, 2)]
            tau, sigma = chain.solve()
            tau_ref, sigma_ref = literal_three_state_tau_sigma(*params)
            np.testing.assert_allclose(tau[order], tau_ref, rtol=1e-12)
            np.testing.assert_allclose(sigma[order], sigma_ref, rtol=1e-12)
            f_ref = literal_three_state_rhs(*params)
            for _ in range(5):
                g = rng.dirichlet(np.ones(3))
                full = np.zeros(3)
                full[order] = g
                np.testing.assert_allclose(chain.rhs(full)[order], f_ref(g), atol=1e-13)
            g0 = tagged_entry_belief(proc, pol, chain)[order]
            rho = lam / mu
            g11 = 1 / (1 + rho + x2 * rho**2)
            np.testing.assert_allclose(g0, [g11, 0.0, 1 - g11], atol=1e-14)


class TestThreeState:
    def test_fcfs_matches_position_ode(self):
        a = three_state_dynamics(1, 1, 1, 0, 0, t_grid=T)
        b = fcfs_belief_ode(make_mmc(1, 1, 1, 2), CutoffPolicy(2), T)
        np.testing.assert_allclose(a.residual_wait, b.residual_wait, atol=1e-6)
        np.testing.assert_allclose(a.residual_wait, (3 + T) / (2 + T), atol=1e-6)

    def test_siro_start(self):
        traj = three_state_dynamics(1, 1, 0.5, 0.5, 0, t_grid=T)
        assert traj.residual_wait[0] == pytest.approx(1.5, abs=1e-14)
        assert traj.residual_wait[1] > traj.residual_wait[0]
        np.testing.assert_allclose(traj.serve_prob, 1.0, atol=1e-12)
        assert traj.r is None

    def test_rejects_bad_rates(self):
        with pytest.raises(ValidationError):
            three_state_dynamics(1, 1, 0.5, 0.6, 0)
        with pytest.raises(ValidationError):
            three_state_dynamics(1, 1, 0.5, 0.5, 1.0, 0.5, 0.0)
        with pytest.raises(ValidationError):
            three_state_dynamics(1, 1, 0.5, 0.5, 0, 0.7, 0.7)


class TestDisciplineCurves:
    def test_shapes(self):
        start = time.perf_counter()
        curves = discipline_wait_curves(1.0, 1.0)
        slopes = discipline_initial_slopes(1.0, 1.0)
        assert time.perf_counter() - start < 1.0
        w0 = [curves[n].residual_wait[0] for n in ("FCFS", "SIRO", "LCFS", "LIEW")]
        assert max(w0) - min(w0) <= 1e-9
        assert slopes["FCFS"] <= 0
        for name in ("SIRO", "LCFS", "LIEW", "LCFS-PR"):
            assert slopes[name] > 0
        assert np.all(np.diff(curves["FCFS"].residual_wait) < 0)
        for name in ("SIRO", "LCFS", "LIEW", "LCFS-PR"):
            assert np.all(np.diff(curves[name].residual_wait) > -1e-12)

    def test_slopes_match_trajectories(self):
        grid = np.array([0.0, 1e-4, 2e-4])
        curves = discipline_wait_curves(1.0, 1.0, grid)
        for name, s in discipline_initial_slopes(1.0, 1.0).items():
            w = curves[name].residual_wait
            fd = (-3 * w[0] + 4 * w[1] - w[2]) / 2e-4
            assert fd == pytest.approx(s, abs=1e-6)

    def test_liew_equalizes(self):
        q21, q22, *_ = discipline_comparison_parameters(1.0, 1.0)["LIEW"]
        proc, pol, disc = three_state_setup(1.0, 1.0, q21, q22, 0.0)
        chain = tagged_chain(proc, pol, disc)
        tau, _ = chain.solve()
        assert tau[chain.index(1, 1)] == pytest.approx(tau[chain.index(2, 2)], abs=1e-10)

    def test_csv(self):
        text = discipline_curves_csv(discipline_wait_curves(1.0, 1.0, np.linspace(0, 1, 4)))
        lines = text.strip().split("\n")
        assert lines[0] == "t,FCFS,SIRO,LIEW,LCFS,LCFS-PR"
        assert len(lines) == 5


@settings(max_examples=150, deadline=None)
@given(regular_processes(max_k=10), st.floats(0.05, 1.0), st.data())
def test_likelihood_ratios_nonincreasing(proc, x, data):
    K = data.draw(st.integers(1, proc.k_max))
    grid = np.linspace(0.0, 10.0 / proc.mu[1], 128)
    traj = fcfs_belief_ode(proc, CutoffPolicy(K, x), grid)
    assert max_ratio_increase(traj) <= 1e-7
    np.testing.assert_allclose(traj.gamma.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(traj.gamma >= 0)
