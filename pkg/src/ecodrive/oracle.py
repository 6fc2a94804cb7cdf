"""Independent brute-force references used to validate the fast solvers.

Nothing here shares code with the production paths: the QP reference is a
dense primal active-set method, the horizon reference is value iteration on
an (E, a) lattice with the exact nonlinear stage cost and the nonlinear
(pre-linearisation) force limits, and gradients come from central
differences. These are test-support tools and may be slow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, SolverError
from .model import VehicleParams, energy_floor, grade_resistance, speed_of, time_slope
from .ocp import HorizonGrid, StageCostCoeffs, stage_cost
from .powertrain import KIND_CV, ForceLimitFit, GearMap

BIG = 1e30


# --------------------------------------------------------------------------
# dense reference QP solver (primal active set)
# --------------------------------------------------------------------------

def dense_reference_solve(H, g, A=None, b=None, G=None, h=None, x0=None,
                          tol=1e-9, max_iter=None):
    """Primal active-set solve of min 1/2 x'Hx + g'x, Ax = b, Gx <= h.

    Needs a feasible starting point (x0, or the origin). Equalities stay in
    the working set permanently; blocking constraints enter one at a time and
    the most negative multiplier leaves (lowest index on ties). Returns
    (x, objective, mu) with mu the full inequality multiplier vector.
    """
    H = np.asarray(H, float)
    g = np.asarray(g, float).ravel()
    n = g.size
    A = np.zeros((0, n)) if A is None else np.asarray(A, float).reshape(-1, n)
    b = np.zeros(0) if b is None else np.asarray(b, float).ravel()
    G = np.zeros((0, n)) if G is None else np.asarray(G, float).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, float).ravel()
    x = np.zeros(n) if x0 is None else np.asarray(x0, float).copy()
    scale = max(1.0, np.abs(h).max() if h.size else 0.0, np.abs(b).max() if b.size else 0.0)
    if (b.size and np.max(np.abs(A @ x - b)) > 1e-7 * scale) or \
       (h.size and np.max(G @ x - h) > 1e-7 * scale):
        raise InfeasibleError("active-set reference needs a feasible start")

    work = [int(i) for i in np.flatnonzero(h - G @ x <= tol * scale)]
    max_iter = max_iter or 50 * (n + G.shape[0] + 1)
    reg = 1e-12 * max(1.0, np.abs(H).max())

    for _ in range(max_iter):
        Gw = G[work] if work else np.zeros((0, n))
        C = np.vstack([A, Gw])
        m_act = C.shape[0]
        K = np.zeros((n + m_act, n + m_act))
        K[:n, :n] = H + reg * np.eye(n)
        K[:n, n:] = C.T
        K[n:, :n] = C
        rhs = np.concatenate([-(H @ x + g), np.zeros(m_act)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        p = sol[:n]
        lam = sol[n:]
        if np.max(np.abs(p)) <= tol * max(1.0, np.abs(x).max()):
            mu_w = lam[A.shape[0]:]
            if mu_w.size == 0 or np.min(mu_w) >= -tol:
                mu = np.zeros(G.shape[0])
                for i, widx in enumerate(work):
                    mu[widx] = max(mu_w[i], 0.0)
                obj = float(0.5 * x @ (H @ x) + g @ x)
                return x, obj, mu
            work.pop(int(np.argmin(mu_w)))
            continue
        # step to the nearest blocking constraint
        alpha = 1.0
        blocking = -1
        free = [i for i in range(G.shape[0]) if i not in work]
        if free:
            Gf = G[free]
            denom = Gf @ p
            room = h[free] - Gf @ x
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(denom > tol, room / denom, np.inf)
            imin = int(np.argmin(ratio))
            if ratio[imin] < alpha:
                alpha = max(0.0, float(ratio[imin]))
                blocking = free[imin]
        x = x + alpha * p
        if blocking >= 0:
            work.append(blocking)
            work.sort()
    raise SolverError("active-set reference did not converge")


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------

def finite_diff_grad(fun, x, h=1e-6):
    """Central-difference gradient with relative step h * max(1, |x_i|)."""
    x = np.asarray(x, float)
    grad = np.empty(x.size)
    for i in range(x.size):
        hi = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += hi
        xm[i] -= hi
        grad[i] = (fun(xp) - fun(xm)) / (2.0 * hi)
    return grad


# --------------------------------------------------------------------------
# dynamic-programming reference for the lambda-adjoined horizon problem
# --------------------------------------------------------------------------

@dataclass
class DpGrid:
    """Lattice sizes for the value-iteration reference."""

    n_e: int = 60
    n_a: int = 51

    def refine(self) -> "DpGrid":
        """Nested lattice refinement: doubles both densities, keeping old levels.

        Nesting makes every coarse policy representable on the finer lattice,
        so the DP optimum decreases monotonically toward the continuous one.
        """
        return DpGrid(n_e=2 * self.n_e - 1, n_a=2 * self.n_a - 1)


@dataclass
class DpResult:
    cost: float
    e_path: np.ndarray
    a_path: np.ndarray


def dp_solve(grid: HorizonGrid, coeffs: StageCostCoeffs, fit: ForceLimitFit,
             params: VehicleParams, initial_state, dp_grid: DpGrid = None) -> DpResult:
    """Backward value iteration over an (E, a) lattice, decision a_next.

    Solves the same horizon problem as the SQP path but with the exact
    nonlinear cost (no quadraticisation) and the nonlinear fitted force
    limits (no tangent rows), so the achieved cost is an independent
    reference; it approaches the continuous optimum from above as the
    lattice is refined.
    """
    dp_grid = dp_grid or DpGrid()
    n = grid.n
    if n * dp_grid.n_e * dp_grid.n_a > 10 ** 6:
        raise SolverError("DP instance too large; shrink the grids or horizon")
    m = params.mass
    ds = grid.ds
    e0, a0 = float(initial_state[0]), float(initial_state[1])

    e_axis = np.linspace(grid.e_lo.min(), grid.e_hi.max(), dp_grid.n_e)
    a_axis = np.linspace(params.a_lo, params.a_hi, dp_grid.n_a)
    jerk = (a_axis[None, :] - a_axis[:, None]) / ds            # (na, na')
    jerk_ok = (jerk >= params.j_lo - 1e-12) & (jerk <= params.j_hi + 1e-12)
    jerk_cost = np.where(jerk_ok, ds * coeffs.w2 * jerk ** 2, BIG)

    def node_feasible(E, a, k):
        """Mask and traction force for states at node k (intervals 0..n-1)."""
        fa = grid.f_alpha[k]
        total = m * a + params.drag_slope * E + fa
        v = speed_of(np.maximum(E, 1.0), params)
        f_hi = fit.f_max_v(v)
        ok = (E >= grid.e_lo[k] - 1e-9) & (E <= grid.e_hi[k] + 1e-9)
        if coeffs.kind == KIND_CV:
            F = np.maximum(total, 0.0)
            ok &= (total <= f_hi + 1e-9) & (total >= params.brake_floor - 1e-9)
        else:
            f_lo = fit.f_min_v(v)
            lo = np.maximum(f_lo, total)
            hi = np.minimum(f_hi, total - params.brake_floor)
            ok &= lo <= hi + 1e-9
            if coeffs.p3 > 0.0:
                F = np.clip(-coeffs.p2 / (2.0 * coeffs.p3), lo, hi)
            else:
                F = lo
        return ok, F

    ee, aa = np.meshgrid(e_axis, a_axis, indexing="ij")        # (nE, na)
    e_next = ee + ds * m * aa
    idx = np.clip(np.searchsorted(e_axis, e_next) - 1, 0, dp_grid.n_e - 2)
    w_hi = (e_next - e_axis[idx]) / (e_axis[idx + 1] - e_axis[idx])
    w_hi = np.clip(w_hi, 0.0, 1.0)
    off_grid = (e_next < e_axis[0] - 1e-9) | (e_next > e_axis[-1] + 1e-9)

    # backward value iteration, keeping every stage's table for extraction;
    # the decision axis is looped to bound temporaries at (nE, na')
    v_term = (e_axis >= grid.e_lo[n] - 1e-9) & (e_axis <= grid.e_hi[n] + 1e-9)
    values = [None] * (n + 1)
    values[n] = np.where(v_term[:, None], 0.0, BIG) * np.ones((1, dp_grid.n_a))
    for k in range(n - 1, -1, -1):
        ok, F = node_feasible(ee, aa, k)
        base = np.where(
            ok,
            ds * stage_cost(np.maximum(ee, energy_floor(1.0, params)), aa,
                            0.0, F, coeffs, params),
            BIG)
        nxt = values[k + 1]
        best = np.empty((dp_grid.n_e, dp_grid.n_a))
        for ia in range(dp_grid.n_a):
            v_interp = ((1.0 - w_hi[:, ia, None]) * nxt[idx[:, ia], :]
                        + w_hi[:, ia, None] * nxt[idx[:, ia] + 1, :])
            v_interp = np.where(off_grid[:, ia, None], BIG, v_interp)
            best[:, ia] = np.min(v_interp + jerk_cost[ia][None, :], axis=1)
        values[k] = np.minimum(base + best, BIG)

    def bellman_at(E, a, k, val_next):
        """One exact Bellman step from a possibly off-lattice state."""
        ok, F = node_feasible(np.array([E]), np.array([a]), k)
        if not ok[0]:
            return BIG, a
        en = E + ds * m * a
        if en < e_axis[0] - 1e-9 or en > e_axis[-1] + 1e-9:
            return BIG, a
        i = int(np.clip(np.searchsorted(e_axis, en) - 1, 0, dp_grid.n_e - 2))
        w = np.clip((en - e_axis[i]) / (e_axis[i + 1] - e_axis[i]), 0.0, 1.0)
        v_row = (1.0 - w) * val_next[i, :] + w * val_next[i + 1, :]
        jk = (a_axis - a) / ds
        okj = (jk >= params.j_lo - 1e-12) & (jk <= params.j_hi + 1e-12)
        cand = np.where(okj, v_row + ds * coeffs.w2 * jk ** 2, BIG)
        best = int(np.argmin(cand))
        here = ds * float(stage_cost(max(E, energy_floor(1.0, params)), a, 0.0,
                                     float(F[0]), coeffs, params))
        return here + float(cand[best]), float(a_axis[best])

    cost0, _ = bellman_at(e0, a0, 0, values[1])
    if cost0 >= BIG / 2:
        raise InfeasibleError("no feasible lattice path from the initial state")

    e_path = [e0]
    a_path = [a0]
    E, a = e0, a0
    for k in range(n):
        _, a_next = bellman_at(E, a, k, values[k + 1])
        E = E + ds * m * a
        a = a_next
        e_path.append(E)
        a_path.append(a)
    return DpResult(cost=float(cost0), e_path=np.asarray(e_path),
                    a_path=np.asarray(a_path))


# --------------------------------------------------------------------------
# feasibility of a trajectory in the original nonlinear limits
# --------------------------------------------------------------------------

def nlp_feasibility_check(plan, profile, params: VehicleParams,
                          fit: ForceLimitFit, gear_map: GearMap = None) -> dict:
    """Max violation per constraint family for a horizon plan or trajectory.

    plan needs arrays s, E, a, j, F, F_brk (controls may be one sample
    shorter than states). Families: speed band, comfort boxes, fitted
    nonlinear force limits, tabulated force envelopes (when a gear map is
    given), brake box and forward-Euler dynamics defects. Values are in
    native units (J, m/s^2, (m/s^2)/m, N); zero means satisfied.
    """
    s = np.asarray(plan.s, float)
    E = np.asarray(plan.E, float)
    a = np.asarray(plan.a, float)
    nc = np.asarray(plan.j).size
    j = np.asarray(plan.j, float)[:nc]
    F = np.asarray(plan.F, float)[:nc]
    fb = np.asarray(plan.F_brk, float)[:nc]
    ds = float(s[1] - s[0])
    m = params.mass

    v_lo = profile.v_min_at(np.minimum(s, profile.route_length))
    v_hi = profile.v_max_at(np.minimum(s, profile.route_length))
    e_lo = energy_floor(v_lo, params)
    e_hi = 0.5 * m * v_hi ** 2

    viol = {}
    viol["speed_band_j"] = float(max(np.max(e_lo - E), np.max(E - e_hi), 0.0))
    viol["accel_box_mps2"] = float(max(np.max(a - params.a_hi),
                                       np.max(params.a_lo - a), 0.0))
    viol["jerk_box"] = float(max(np.max(j - params.j_hi),
                                 np.max(params.j_lo - j), 0.0)) if nc else 0.0
    viol["brake_box_n"] = float(max(np.max(fb), np.max(params.brake_floor - fb), 0.0)) if nc else 0.0

    v_ctl = speed_of(E[:nc], params)
    f_hi_fit = fit.f_max_v(v_ctl)
    f_lo_fit = fit.f_min_v(v_ctl)
    viol["force_fit_n"] = float(max(np.max(F - f_hi_fit),
                                    np.max(f_lo_fit - F), 0.0)) if nc else 0.0
    if gear_map is not None and nc:
        f_hi_tab = gear_map.envelope_f_max(E[:nc])
        viol["force_envelope_n"] = float(max(np.max(F - f_hi_tab), 0.0))
        if fit.kind != KIND_CV:
            f_lo_tab = gear_map.envelope_f_min(E[:nc])
            viol["force_envelope_n"] = max(viol["force_envelope_n"],
                                           float(max(np.max(f_lo_tab - F), 0.0)))

    if nc:
        s_mid = s[:nc] + 0.5 * ds
        f_alpha = grade_resistance(profile.grade_at(np.minimum(s_mid, profile.route_length)), params)
        defect_e = np.max(np.abs(E[1:nc + 1] - E[:nc] - ds * m * a[:nc])) if E.size > nc else 0.0
        defect_a = np.max(np.abs(a[1:nc + 1] - a[:nc] - ds * j)) if a.size > nc else 0.0
        defect_f = np.max(np.abs(F - (m * a[:nc] + params.drag_slope * E[:nc] - fb + f_alpha)))
        viol["dynamics_defect"] = float(max(defect_e, defect_a, defect_f))
    return viol


def scaled_violations(report: dict, params: VehicleParams, e_scale: float,
                      f_scale: float) -> dict:
    """Violation report normalised by family scales (dimensionless)."""
    scale = {
        "speed_band_j": e_scale,
        "accel_box_mps2": max(params.a_hi, -params.a_lo),
        "jerk_box": max(params.j_hi, -params.j_lo),
        "brake_box_n": -params.brake_floor,
        "force_fit_n": f_scale,
        "force_envelope_n": f_scale,
        "dynamics_defect": e_scale,
    }
    return {k: v / scale.get(k, 1.0) for k, v in report.items()}
