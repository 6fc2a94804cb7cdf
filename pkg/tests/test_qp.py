import numpy as np
import pytest
import scipy.sparse as sp

from ecodrive import qp
from ecodrive.oracle import dense_reference_solve


class Problem:
    def __init__(self, H, g, A=None, b=None, G=None, h=None, obj_const=0.0):
        n = len(g)
        self.H = sp.csr_matrix(np.atleast_2d(H))
        self.g = np.asarray(g, float)
        self.A = sp.csr_matrix(A) if A is not None else sp.csr_matrix((0, n))
        self.b = np.asarray(b, float) if b is not None else np.zeros(0)
        self.G = sp.csr_matrix(G) if G is not None else sp.csr_matrix((0, n))
        self.h = np.asarray(h, float) if h is not None else np.zeros(0)
        self.obj_const = obj_const


def random_banded_qp(seed, n_stages=50):
    """Stage-structured strictly convex QP with a known interior point."""
    rng = np.random.default_rng(seed)
    n = 3 * n_stages
    diag = rng.uniform(0.5, 3.0, n)
    off = rng.uniform(-0.4, 0.4, n - 1)
    H = sp.diags([off, diag, off], offsets=[-1, 0, 1], format="csr")
    H = (H.T @ H + 0.1 * sp.eye(n)).tocsr()  # PSD, pentadiagonal
    g = rng.normal(size=n)
    x_feas = rng.uniform(-0.5, 0.5, n)
    # equality chain rows coupling consecutive stages
    m_eq = n_stages - 1
    rows, cols, vals = [], [], []
    for k in range(m_eq):
        rows += [k, k, k]
        cols += [3 * k, 3 * k + 1, 3 * (k + 1)]
        vals += [1.0, rng.uniform(0.5, 2.0), -1.0]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m_eq, n))
    b = A @ x_feas
    G = sp.vstack([sp.eye(n), -sp.eye(n)]).tocsr()
    h = np.concatenate([x_feas + rng.uniform(0.5, 2.0, n),
                        -(x_feas - rng.uniform(0.5, 2.0, n))])
    return Problem(H.toarray(), g, A.toarray(), b, G.toarray(), h), x_feas


class TestAnalyticCases:
    def test_scalar_interior_minimum(self):
        p = Problem([[1.0]], [-1.0], G=[[-1.0], [1.0]], h=[0.0, 10.0])
        sol = qp.solve(p)
        assert sol.status == qp.OPTIMAL
        assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
        assert sol.objective == pytest.approx(-0.5, abs=1e-9)

    def test_box_clipped_with_dual(self):
        # min 1/2 x^2 - x on [2, 3]: x* = 2, lower-bound dual = 1
        p = Problem([[1.0]], [-1.0], G=[[-1.0], [1.0]], h=[-2.0, 3.0])
        sol = qp.solve(p)
        assert sol.status == qp.OPTIMAL
        assert sol.x[0] == pytest.approx(2.0, abs=1e-7)
        assert sol.mu[0] == pytest.approx(1.0, abs=1e-6)
        assert sol.mu[1] == pytest.approx(0.0, abs=1e-6)

    def test_equality_only(self):
        p = Problem(np.eye(3), np.zeros(3), A=[[1.0, 1.0, 1.0]], b=[3.0])
        sol = qp.solve(p)
        assert sol.status == qp.OPTIMAL
        assert sol.x == pytest.approx(np.ones(3), abs=1e-9)

    def test_infeasible_detected(self):
        p = Problem([[1.0]], [0.0], G=[[1.0], [-1.0]], h=[-1.0, -1.0])
        sol = qp.solve(p)
        assert sol.status == qp.INFEASIBLE

    def test_objective_constant_included(self):
        p = Problem([[1.0]], [-1.0], G=[[-1.0], [1.0]], h=[0.0, 10.0], obj_const=5.0)
        sol = qp.solve(p)
        assert sol.objective == pytest.approx(4.5, abs=1e-9)


class TestAgainstDenseReference:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_active_set_objective(self, seed):
        prob, x_feas = random_banded_qp(seed)
        sol = qp.solve(prob)
        assert sol.status == qp.OPTIMAL
        x_ref, obj_ref, _ = dense_reference_solve(
            prob.H.toarray(), prob.g, prob.A.toarray(), prob.b,
            prob.G.toarray(), prob.h, x0=x_feas)
        assert sol.objective == pytest.approx(obj_ref, rel=1e-7, abs=1e-10)


class TestSolverProperties:
    def test_bitwise_determinism(self):
        prob, _ = random_banded_qp(7)
        a = qp.solve(prob)
        b = qp.solve(prob)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.mu, b.mu)
        assert a.iterations == b.iterations
        w = (a.x, a.nu, a.mu)
        c = qp.solve(prob, warm_start=w)
        d = qp.solve(prob, warm_start=w)
        assert np.array_equal(c.x, d.x)

    def test_objective_scaling_invariance(self):
        prob, _ = random_banded_qp(11)
        sol1 = qp.solve(prob)
        scaled = Problem((100.0 * prob.H).toarray(), 100.0 * prob.g,
                         prob.A.toarray(), prob.b, prob.G.toarray(), prob.h)
        sol2 = qp.solve(scaled)
        assert sol2.x == pytest.approx(sol1.x, abs=1e-6)
        active = sol1.mu > 1e-5
        if np.any(active):
            assert sol2.mu[active] == pytest.approx(100.0 * sol1.mu[active], rel=1e-4)

    def test_optimal_residuals_below_tolerance(self):
        prob, _ = random_banded_qp(13)
        sol = qp.solve(prob, tol=1e-8)
        assert sol.status == qp.OPTIMAL
        assert sol.rel_residuals["stationarity"] <= 1e-8
        assert sol.rel_residuals["complementarity"] <= 1e-8
        assert sol.rel_residuals["primal_eq"] <= 1e-9
        assert sol.rel_residuals["primal_ineq"] <= 1e-9
        assert np.all(sol.mu >= 0.0)


class TestKktResiduals:
    def test_zero_duals_interior_point(self):
        prob, x_feas = random_banded_qp(3)
        stat, eq, ineq, comp = qp.kkt_residuals(prob, x_feas,
                                                np.zeros(prob.b.size),
                                                np.zeros(prob.h.size))
        expected = np.max(np.abs(prob.H @ x_feas + prob.g))
        assert stat == pytest.approx(expected, rel=1e-12)
        assert ineq == 0.0
        assert comp == 0.0

    def test_residuals_vanish_at_optimum(self):
        prob, _ = random_banded_qp(5)
        sol = qp.solve(prob)
        stat, eq, ineq, comp = qp.kkt_residuals(prob, sol.x, sol.nu, sol.mu)
        scale = max(1.0, np.abs(prob.g).max())
        assert stat <= 1e-6 * scale
        assert ineq <= 1e-8

    def test_perturbation_grows_linearly(self):
        prob, _ = random_banded_qp(9)
        sol = qp.solve(prob)
        base = qp.kkt_residuals(prob, sol.x, sol.nu, sol.mu)[0]
        out = []
        for eps in (1e-6, 1e-5, 1e-4):
            x = sol.x.copy()
            x[0] += eps
            out.append(qp.kkt_residuals(prob, x, sol.nu, sol.mu)[0] - base)
        # first-order growth ~ eps * |H row|
        h00 = abs(prob.H[0, 0])
        assert out[1] == pytest.approx(10 * out[0], rel=0.3)
        assert out[2] == pytest.approx(1e-4 * h00, rel=0.5)
