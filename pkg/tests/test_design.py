from fractions import Fraction

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from optqueue.design import (
    CutoffPolicy,
    DesignOutcome,
    Discipline,
    DisciplineKind,
    EntryExitPolicy,
    cutoff_distribution,
    detect_cutoff,
    discipline_rates,
    effective_arrivals,
    invariant_distribution,
    ir_value,
    k_bar_2,
    liew_split,
    lp_oracle,
    objective,
    psi,
    solve_optimal_design,
)
from optqueue.errors import FeasibilityError, RegularityError, UnsupportedError, ValidationError
from optqueue.process import PrimitiveProcess, make_mmc
from optqueue.simplex import simplex_max

from conftest import random_regular_process, regular_processes

THIRD = np.full(3, 1 / 3)
MU = np.array([0.0, 1.0, 1.0])


def exact_cutoff(lam, mu, K, x):
    """Product formula in rational arithmetic."""
    w = [Fraction(1)]
    for k in range(1, K + 1):
        w.append(w[-1] * Fraction(lam[k - 1]) / Fraction(mu[k]))
    if K >= 1:
        w[K] *= Fraction(x)
    s = sum(w)
    return [float(v / s) for v in w]


def lp_by_scipy(process, alpha, R, V, C):
    """Independent formulation of the relaxed program for HiGHS."""
    K = process.k_max
    mu, lam, k = process.mu, process.lam, np.arange(K + 1)
    c = -((1 - alpha) * R * mu + alpha * (mu * V - k * C))
    rows = [-(mu * V - k * C)]
    for j in range(K):
        r = np.zeros(K + 1)
        r[j], r[j + 1] = -lam[j], mu[j + 1]
        rows.append(r)
    res = linprog(c, A_ub=np.array(rows), b_ub=np.zeros(K + 1), A_eq=np.ones((1, K + 1)), b_eq=[1.0], bounds=(0, None), method="highs")
    assert res.status == 0
    return -res.fun


class TestPolicies:
    def test_entry_exit_validation(self):
        with pytest.raises(ValidationError):
            EntryExitPolicy.entry_only([1.2, 0])
        with pytest.raises(ValidationError):
            EntryExitPolicy(np.ones(2), np.zeros((2, 2)), np.array([[0, 0], [0, 1.5]]))
        with pytest.raises(ValidationError):
            EntryExitPolicy(np.ones(2), np.array([[0, 1.0], [0, 0]]), None)  # position beyond length
        with pytest.raises(ValidationError):
            EntryExitPolicy(np.ones(2), -np.eye(2), None)

    def test_cutoff_policy(self):
        assert list(CutoffPolicy(3, 0.5).entry_probs(5)) == [1, 1, 0.5, 0, 0, 0]
        assert list(CutoffPolicy(0).entry_probs(2)) == [0, 0, 0]
        with pytest.raises(ValidationError):
            CutoffPolicy(2, 0.0)
        with pytest.raises(ValidationError):
            CutoffPolicy(3).entry_probs(2)
        np.testing.assert_array_equal(effective_arrivals(make_mmc(2, 1, 1, 4), CutoffPolicy(2, 0.5)), [2, 1])


class TestDisciplines:
    def test_fcfs_mmc2(self):
        d = discipline_rates(make_mmc(1, 1.5, 2, 5), "FCFS", 5)
        for k in range(1, 6):
            np.testing.assert_array_equal(d.rates(k), [1.5 if l <= 2 else 0 for l in range(1, k + 1)])
        assert d.feasible and d.work_conserving

    def test_siro_lcfs_mm1(self):
        p = make_mmc(1, 1, 1, 2)
        np.testing.assert_array_equal(discipline_rates(p, "SIRO", 2).rates(2), [0.5, 0.5])
        np.testing.assert_array_equal(discipline_rates(p, "LCFS", 2).rates(2), [0, 1])

    def test_liew_mm1(self):
        q21, q22 = liew_split(make_mmc(1, 1, 1, 2))
        # Hand solution of the two-agent system at lambda = mu = 1.
        assert q22 == pytest.approx(2 / 3, abs=1e-10)
        assert q21 + q22 == pytest.approx(1.0, abs=1e-14)
        d = discipline_rates(make_mmc(1, 1, 1, 2), DisciplineKind.LIEW, 2)
        assert d.kind is DisciplineKind.LIEW

    def test_errors(self):
        bad = PrimitiveProcess([1, 1, 1, 1], [0, 1, 3, 3.5])
        for kind in ("FCFS", "LCFS"):
            with pytest.raises(FeasibilityError):
                discipline_rates(bad, kind, 3)
        with pytest.raises(UnsupportedError):
            discipline_rates(make_mmc(1, 1, 1, 3), "LIEW", 3)
        with pytest.raises(UnsupportedError):
            discipline_rates(make_mmc(1, 1, 1, 3), "Custom", 3)
        with pytest.raises(ValidationError):
            discipline_rates(make_mmc(1, 1, 1, 3), "FCFS", 4)

    def test_build_flags(self):
        q = np.array([[0, 0, 0], [0, 1, 0], [0, 0.9, 0.2]])
        d = Discipline.build("Custom", q, [0, 1, 1])
        assert not d.feasible and not d.work_conserving
        q = np.array([[0, 0, 0], [0, 1, 0], [0, 0.5, 0.4]])
        d = Discipline.build("Custom", q, [0, 1, 1])
        assert d.feasible and not d.work_conserving

    @settings(max_examples=60, deadline=None)
    @given(regular_processes(max_k=8, min_k=2))
    def test_tables_feasible_and_conserving(self, proc):
        for kind in ("FCFS", "LCFS", "SIRO"):
            d = discipline_rates(proc, kind, proc.k_max)
            assert d.feasible and d.work_conserving
            for k in range(1, proc.k_max + 1):
                assert d.rates(k).sum() == pytest.approx(proc.mu[k], rel=1e-12, abs=1e-12)


class TestDistributions:
    def test_invariant_examples(self):
        p = make_mmc(1, 1, 1, 2)
        np.testing.assert_allclose(invariant_distribution(p, CutoffPolicy(2).to_policy(2)), THIRD, atol=1e-15)
        np.testing.assert_array_equal(invariant_distribution(p, EntryExitPolicy.entry_only([0, 1, 1])), [1, 0, 0])
        q = make_mmc(1, 2, 1, 1)
        np.testing.assert_allclose(invariant_distribution(q, CutoffPolicy(1).to_policy(1)), [2 / 3, 1 / 3], atol=1e-15)

    def test_invariant_with_removals(self):
        # Birth lam x (1 - sum z), death mu + sum y.
        p = make_mmc(1, 1, 1, 2)
        y = np.zeros((3, 3))
        y[2, 2] = 1.0
        z = np.zeros((3, 3))
        z[1, 1] = 0.5
        pol = EntryExitPolicy(np.array([1, 1, 0.0]), y, z)
        np.testing.assert_allclose(invariant_distribution(p, pol), exact_cutoff([1, 0.5], [0, 1, 2], 2, 1), atol=1e-15)

    def test_cutoff_examples(self):
        p = make_mmc(1, 1, 1, 2)
        np.testing.assert_allclose(cutoff_distribution(p, 2, 1), THIRD, atol=1e-15)
        np.testing.assert_allclose(cutoff_distribution(p, 2, 0.5), [0.4, 0.4, 0.2], atol=1e-15)
        np.testing.assert_array_equal(cutoff_distribution(p, 0), [1.0])
        with pytest.raises(ValidationError):
            cutoff_distribution(p, 3)
        with pytest.raises(ValidationError):
            cutoff_distribution(p, 2, 0)

    @settings(max_examples=100, deadline=None)
    @given(regular_processes(max_k=10), st.floats(0.01, 1.0), st.data())
    def test_cutoff_matches_invariant_and_exact(self, proc, x, data):
        K = data.draw(st.integers(0, proc.k_max))
        pc = cutoff_distribution(proc, K, x)
        pi = invariant_distribution(proc, CutoffPolicy(K, x).to_policy(proc.k_max))
        np.testing.assert_allclose(pi[: K + 1], pc, rtol=0, atol=1e-12)
        assert np.all(pi[K + 1 :] == 0)
        np.testing.assert_allclose(pc, exact_cutoff(proc.lam, proc.mu, K, x), rtol=1e-12, atol=1e-15)
        assert pc.sum() == pytest.approx(1.0, abs=1e-12)


class TestObjective:
    def test_values(self):
        assert objective(THIRD, MU, 0, 1, 1.5, 1) == pytest.approx(2 / 3, abs=1e-15)
        assert objective([1.0], MU, 0.3, 1, 1.5, 1) == 0
        assert objective(THIRD, MU, 1, 1, 1.5, 1) == pytest.approx(0, abs=1e-15)
        assert ir_value(THIRD, MU, 1.5, 1) == pytest.approx(0, abs=1e-15)
        assert ir_value([1.0], MU, 1.5, 1) == 0
        assert ir_value(THIRD, MU, 2, 1) == pytest.approx(1 / 3, abs=1e-15)

    def test_psi(self):
        p = make_mmc(1, 1, 1, 5)
        assert [psi(p, 1.5, 1, K) for K in range(4)] == pytest.approx([0, 0.5, 0, -1.5], abs=1e-15)

    def test_k_bar_2(self):
        p = make_mmc(1, 1, 1, 10)
        assert k_bar_2(p, 1, 1, 1.5, 1) == 1
        assert k_bar_2(p, 1, 1, 1e6, 1) == 10
        assert k_bar_2(p, 0.5, 1, 1.5, 1) == 2
        assert k_bar_2(p, 0, 1, 1.5, 1) == 10

    @settings(max_examples=100, deadline=None)
    @given(regular_processes(max_k=10), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_psi_single_peaked(self, proc, V, C):
        vals = np.array([psi(proc, V, C, K) for K in range(proc.k_max + 1)])
        d = np.diff(vals)
        tol = 1e-12 * max(1.0, np.abs(vals).max())
        falling = False
        for step in d:
            if step < -tol:
                falling = True
            elif step > tol:
                assert not falling


class TestSolver:
    def test_necessity_environment(self):
        out = solve_optimal_design(make_mmc(1, 1, 1, 10), 0, 1, 1.5, 1)
        assert (out.K_star, out.x_star, out.ir_binding) == (2, 1.0, True)
        np.testing.assert_allclose(out.p_star, THIRD, atol=1e-15)
        assert lp_oracle(make_mmc(1, 1, 1, 10), 0, 1, 1.5, 1) @ make_mmc(1, 1, 1, 10).mu == pytest.approx(
            out.objective, abs=1e-8
        )

    def test_alpha_one(self):
        proc = make_mmc(1, 1, 1, 6)
        out = solve_optimal_design(proc, 1, 1, 1.5, 1)
        assert (out.K_star, out.x_star) == (1, 1.0)
        assert out.objective == pytest.approx(0.25, abs=1e-15)
        p = lp_oracle(proc, 1, 1, 1.5, 1)
        assert objective(p, proc.mu, 1, 1, 1.5, 1) == pytest.approx(0.25, abs=1e-12)
        assert detect_cutoff(proc, p) == (1, 1.0)

    def test_empty_queue_optimal(self):
        out = solve_optimal_design(make_mmc(1, 1, 1, 4), 1, 1, 0.5, 1)
        assert out.K_star == 0 and out.objective == 0
        np.testing.assert_array_equal(out.p_star, [1.0])

    def test_rationing(self):
        # IR binds strictly inside (0, 1) at K = 3.
        proc = make_mmc(1, 1, 1, 10)
        out = solve_optimal_design(proc, 0, 1, 1.8, 1)
        assert out.K_star == 3 and 0 < out.x_star < 1 and out.ir_binding
        assert abs(out.ir_value) <= 1e-9 * 1.8
        assert objective(lp_oracle(proc, 0, 1, 1.8, 1), proc.mu, 0, 1, 1.8, 1) == pytest.approx(out.objective, abs=1e-8)

    def test_nonregular_rejected(self):
        with pytest.raises(RegularityError, match="lp_oracle"):
            solve_optimal_design(PrimitiveProcess([1, 1, 1, 1], [0, 1, 3, 3.5]), 0.5, 1, 2, 1)

    def test_param_checks(self):
        with pytest.raises(ValidationError):
            solve_optimal_design(make_mmc(1, 1, 1, 3), 1.5, 1, 1, 1)
        with pytest.raises(ValidationError):
            solve_optimal_design(make_mmc(1, 1, 1, 3), 0.5, 1, 1, 0)

    def test_outcome_json(self):
        out = solve_optimal_design(make_mmc(1, 1, 1, 10), 0, 1, 1.8, 1)
        back = DesignOutcome.from_json(out.to_json())
        assert back.K_star == out.K_star and back.x_star == out.x_star
        np.testing.assert_array_equal(back.p_star, out.p_star)
        assert set(out.to_json()) == {"K_star", "x_star", "p_star", "objective", "ir_value", "ir_binding"}

    def test_lp_trivial(self):
        np.testing.assert_array_equal(lp_oracle(make_mmc(1, 1, 1, 3), 0.5, 1, 2, 1, K_trunc=0), [1.0])

    @settings(max_examples=80, deadline=None)
    @given(regular_processes(max_k=8), st.floats(0, 1), st.floats(0.1, 5), st.floats(0.2, 10), st.floats(0.1, 5))
    def test_oracle_equivalence(self, proc, alpha, R, V, C):
        out = solve_optimal_design(proc, alpha, R, V, C)
        p = lp_oracle(proc, alpha, R, V, C)
        lp_val = objective(p, proc.mu, alpha, R, V, C)
        assert out.objective == pytest.approx(lp_val, abs=1e-8)
        assert out.objective == pytest.approx(lp_by_scipy(proc, alpha, R, V, C), abs=1e-7)
        assert out.ir_value >= -1e-9
        np.testing.assert_allclose(out.p_star, cutoff_distribution(proc, out.K_star, out.x_star), atol=1e-15)
        if alpha > 0:
            assert out.K_star <= k_bar_2(proc, alpha, R, V, C)
        h = proc.mu * V - np.arange(proc.k_max + 1) * C
        if out.x_star > 0 and out.K_star < proc.k_max:
            assert out.K_star >= int(np.argmax(h)) or proc.lam[: int(np.argmax(h))].min() == 0


class TestSimplex:
    def test_known(self):
        # max 3x + 2y, x + y <= 4, x + 3y <= 6, x <= 3.
        res = simplex_max([3, 2], [[1, 1], [1, 3], [1, 0]], [4, 6, 3])
        assert res.status == "optimal"
        np.testing.assert_allclose(res.x, [3, 1], atol=1e-12)
        assert res.value == pytest.approx(11)

    def test_infeasible_unbounded(self):
        assert simplex_max([1], a_eq=[[1]], b_eq=[-1]).status == "infeasible"
        assert simplex_max([1, 0], [[-1, 1]], [1]).status == "unbounded"

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    @example(3_186_702_635)  # unbounded; HiGHS presolve reports infeasible
    def test_against_highs(self, seed):
        rng = np.random.default_rng(seed)
        n, m = rng.integers(2, 7), rng.integers(1, 6)
        a = rng.integers(-3, 4, (m, n)).astype(float)
        b = rng.integers(0, 5, m).astype(float)  # x = 0 feasible
        a_eq = np.ones((1, n)) if rng.random() < 0.5 else None
        b_eq = np.ones(1) if a_eq is not None else None
        c = rng.integers(-3, 4, n).astype(float)
        ours = simplex_max(c, a, b, a_eq, b_eq)
        ref = linprog(-c, A_ub=a, b_ub=b, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if ref.status == 2:
            # HiGHS presolve can report "infeasible" for unbounded problems; settle it with a feasibility solve.
            feas = linprog(np.zeros(n), A_ub=a, b_ub=b, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
            ref_status = 3 if feas.status == 0 else 2
        else:
            ref_status = ref.status
        if ref_status == 3:
            assert ours.status == "unbounded"
        elif ref_status == 2:
            assert ours.status == "infeasible"
        else:
            assert ours.status == "optimal"
            assert ours.value == pytest.approx(-ref.fun, abs=1e-9)
            assert np.all(a @ ours.x <= b + 1e-9) and np.all(ours.x >= -1e-12)


def test_detect_cutoff_rejects_non_cutoff():
    proc = make_mmc(1, 1, 1, 3)
    assert detect_cutoff(proc, [0.5, 0.25, 0.25, 0]) is None
    assert detect_cutoff(proc, [1, 0, 0, 0]) == (0, 1.0)
    K, x = detect_cutoff(proc, cutoff_distribution(proc, 3, 0.3))
    assert K == 3 and x == pytest.approx(0.3, abs=1e-12)
