"""Online planning layer: heuristic guess, costate update and the MPC loop.

One MPC update solves a single QP (real-time iteration), blends the
linearisation trajectory with step beta, performs one derivative-free Newton
step on the travel-time price lambda_t, applies the first control to the
plant and advances. The travel-time budget comes from the heuristic velocity
profile; in shrinking-horizon mode the budget is the fixed arrival time, in
moving-horizon mode it is re-integrated over the sliding window.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import qp
from .errors import InfeasibleError, SolverError
from .model import (RoadProfile, Trajectory, VehicleParams, accel_limits,
                    energy_floor, grade_resistance, kinetic_energy, speed_of,
                    time_slope)
from .ocp import (HorizonGrid, StageCostCoeffs, assemble_qp, discretized_cost,
                  stage_cost)
from .powertrain import (KIND_CV, ForceLimitFit, GearMap, PowerFit,
                         TabulatedForceLimits)

SHMPC = "shmpc"
MHMPC = "mhmpc"


@dataclass(frozen=True)
class MpcConfig:
    """Tuning of the online layer; distances in m, speeds in m/s."""

    mode: str = SHMPC
    s_hmax: float = math.inf       # moving-horizon window length
    n_route_samples: int = 400     # ds = route length / n_route_samples
    dzeta_intervals: int = 1       # plant advance per update, in multiples of ds
    v_cru: float = 80.0 / 3.6
    beta: float = 1.0
    w1: float = 0.0
    w2: float = 0.0
    lambda_max: float = None       # None: estimated at startup
    rti: bool = True               # False: converge SQP at every update
    sqp_max_iter: int = 30
    sqp_rel_tol: float = 1e-6
    freeze_tail_intervals: int = 10
    tf_bump_at: float = None       # route fraction where the budget changes
    tf_bump_delta: float = 0.0     # seconds added to the budget
    collect_feasibility: bool = False

    def __post_init__(self):
        if self.mode not in (SHMPC, MHMPC):
            raise ValueError(f"unknown MPC mode {self.mode!r}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")


@dataclass
class Plan:
    """Predicted horizon trajectory extracted from one QP solution."""

    s: np.ndarray        # (n+1,) m
    t: np.ndarray        # (n+1,) s
    E: np.ndarray        # (n+1,) J
    a: np.ndarray        # (n+1,) m/s^2
    j: np.ndarray        # (n,) (m/s^2)/m
    F: np.ndarray        # (n,) N
    F_brk: np.ndarray    # (n,) N
    ds: float

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def cost(self, coeffs, params, include_lambda=True) -> float:
        return discretized_cost(self.E, self.a, self.j, self.F, self.ds,
                                coeffs, params, include_lambda)


def heuristic_velocity(profile: RoadProfile, params: VehicleParams,
                       limits, v_cru: float, ds: float) -> tuple:
    """Cruise-speed filter: hold v_cru unless the actuator cannot.

    Marches the kinetic energy forward with the acceleration band from
    accel_limits, so the implied per-interval acceleration is feasible by
    construction. Speeds are clipped into the road band; when the road
    minimum exceeds the unreachable target the profile is clipped up to it.
    Returns (s_nodes, v_hg).
    """
    s_f = profile.route_length
    n = int(round(s_f / ds))
    s_nodes = ds * np.arange(n + 1)
    v = np.empty(n + 1)
    v[0] = float(np.clip(v_cru, profile.v_min_at(0.0), profile.v_max_at(0.0)))
    e = kinetic_energy(v[0], params)
    m = params.mass
    for k in range(n):
        s_mid = s_nodes[k] + 0.5 * ds
        a_mn, a_mx = accel_limits(e, s_mid, limits, profile, params)
        s_next = min(s_nodes[k + 1], s_f)
        target = min(v_cru, float(profile.v_max_at(s_next)))
        e_target = kinetic_energy(target, params)
        e_next = float(np.clip(e_target, e + ds * m * a_mn, e + ds * m * a_mx))
        e_next = float(np.clip(e_next, energy_floor(profile.v_min_at(s_next), params),
                               kinetic_energy(profile.v_max_at(s_next), params)))
        e = e_next
        v[k + 1] = speed_of(e, params)
    return s_nodes, v


def max_travel_time(s_nodes, v_hg) -> float:
    """Trapezoid integral of ds / v_hg along the profile."""
    return float(np.trapezoid(1.0 / np.asarray(v_hg, float), np.asarray(s_nodes, float)))


def rms_jerk(traj: Trajectory) -> float:
    """RMS of the time-domain jerk j_time = j_space * v over the route, m/s^3."""
    s = traj.s
    sig = (traj.j * traj.v) ** 2
    return float(math.sqrt(np.trapezoid(sig, s) / (s[-1] - s[0])))


def rms_jerk_space(traj: Trajectory) -> float:
    """RMS of the space-domain jerk signal, (m/s^2)/m."""
    s = traj.s
    return float(math.sqrt(np.trapezoid(traj.j ** 2, s) / (s[-1] - s[0])))


def brake_norm(traj: Trajectory) -> float:
    """RMS of the decelerating force F_brk + min(F, 0) over the route, N."""
    s = traj.s
    sig = (traj.F_brk + np.minimum(traj.F, 0.0)) ** 2
    return float(math.sqrt(np.trapezoid(sig, s) / (s[-1] - s[0])))


@dataclass
class CostateEstimator:
    """Travel-time price with the damped-secant update and chord warm start.

    f(lambda) = predicted end-of-horizon time minus the budget; it decreases
    in lambda. One update is performed per MPC stage using the secant through
    the last two observations, floored at the chord slope between the
    endpoint solves (f_max at lambda 0, f_min at lambda_max).
    """

    lam: float
    lam_max: float
    f_min: float
    f_max: float
    lam_min: float = 0.0
    prev: tuple = None           # (lambda, f) of the previous stage
    pinned: bool = False

    @property
    def slope_floor(self) -> float:
        return (self.f_max - self.f_min) / (self.lam_min - self.lam_max)

    @classmethod
    def warm_start(cls, lam_max: float, f_max: float, f_min: float) -> "CostateEstimator":
        est = cls(lam=0.0, lam_max=lam_max, f_min=f_min, f_max=f_max)
        if f_max <= 0.0:
            # even free driving beats the budget
            est.pinned = True
            return est
        est.lam = min(max(0.0, -f_max / est.slope_floor), lam_max)
        return est

    def update(self, f_value: float) -> float:
        """One Newton/secant step; returns the new lambda."""
        if self.pinned and f_value <= 0.0:
            self.prev = (self.lam, f_value)
            return self.lam
        self.pinned = False
        slope = self.slope_floor
        if self.prev is not None and self.prev[0] != self.lam:
            secant = (self.prev[1] - f_value) / (self.prev[0] - self.lam)
            slope = min(secant, slope)
        new_lam = float(np.clip(self.lam - f_value / slope, self.lam_min, self.lam_max))
        if new_lam == self.lam_max and f_value > 0.0:
            # root escaped above the bracket (budget tightened); expand it
            self.lam_max *= 2.0
            new_lam = min(2.0 * new_lam, self.lam_max)
        self.prev = (self.lam, f_value)
        self.lam = new_lam
        if new_lam == self.lam_min and f_value < 0.0:
            self.pinned = True
        return new_lam


class HorizonController:
    """Assembles and solves horizon QPs for one vehicle configuration."""

    def __init__(self, profile: RoadProfile, params: VehicleParams,
                 power_fit: PowerFit, force_fit: ForceLimitFit,
                 gear_map: GearMap, c_eg: float, config: MpcConfig,
                 ds: float = None):
        self.profile = profile
        self.params = params
        self.power_fit = power_fit
        self.force_fit = force_fit
        self.gear_map = gear_map
        self.config = config
        self.ds = ds if ds is not None else profile.route_length / config.n_route_samples
        self.coeffs = StageCostCoeffs.from_power_fit(
            power_fit, c_eg=c_eg, w1=config.w1, w2=config.w2)
        self.tab_limits = TabulatedForceLimits(gear_map, params)
        s_nodes, v_hg = heuristic_velocity(profile, params, self.tab_limits,
                                           config.v_cru, self.ds)
        self.s_hg = s_nodes
        self.v_hg = v_hg
        self.t_hg = np.concatenate(
            [[0.0], np.cumsum(self.ds * time_slope(kinetic_energy(v_hg[:-1], params), params))])
        self.t_f = max_travel_time(s_nodes, v_hg)
        if config.mode == SHMPC and config.s_hmax < profile.route_length:
            raise ValueError("shrinking-horizon mode needs s_hmax >= route length")

    # -- horizon pieces ------------------------------------------------------

    def grid_at(self, zeta: float) -> HorizonGrid:
        return HorizonGrid.build(self.profile, self.params, zeta, self.ds,
                                 self.config.s_hmax)

    def e_hat_from_heuristic(self, grid: HorizonGrid) -> np.ndarray:
        v = np.interp(grid.s_nodes, self.s_hg, self.v_hg)
        return kinetic_energy(v, self.params)

    def budget(self, zeta: float, t_now: float, grid: HorizonGrid, t_f: float) -> float:
        """Absolute time bound at the horizon end."""
        if self.config.mode == SHMPC:
            return t_f
        end = zeta + grid.s_h
        window = np.trapezoid(
            1.0 / np.interp(np.linspace(zeta, end, grid.n + 1), self.s_hg, self.v_hg),
            dx=grid.ds)
        return t_now + float(window)

    def solve_horizon(self, grid: HorizonGrid, state, e_hat, lam, warm=None):
        """Assemble and solve one QP; state is (t0, E0, a0)."""
        coeffs = self.coeffs.with_lambda(lam)
        problem = assemble_qp(grid, coeffs, self.force_fit, e_hat,
                              (state[1], state[2]), self.params)
        sol = qp.solve(problem, warm_start=warm)
        if sol.status == qp.MAX_ITER and warm is not None:
            sol = qp.solve(problem)  # cold retry; warm starts can stall
        if sol.status == qp.INFEASIBLE:
            # fallback: relax comfort boxes to the pure force-based band
            relaxed = replace(self.params, a_lo=-10.0, a_hi=10.0,
                              j_lo=100.0 * self.params.j_lo, j_hi=100.0 * self.params.j_hi)
            problem = assemble_qp(grid, coeffs, self.force_fit, e_hat,
                                  (state[1], state[2]), relaxed)
            sol = qp.solve(problem, warm_start=warm)
            if sol.status != qp.OPTIMAL:
                raise InfeasibleError(f"horizon QP infeasible at zeta={grid.start} m")
            sol.degraded = True
        elif sol.status != qp.OPTIMAL:
            raise SolverError(f"QP did not converge at zeta={grid.start} m "
                              f"({sol.status}, iter {sol.iterations})")
        return sol, problem

    def extract_plan(self, problem, sol, t0: float) -> Plan:
        lay = problem.layout
        E = sol.x[lay.e].copy()
        t = t0 + np.concatenate(
            [[0.0], np.cumsum(problem.grid.ds * time_slope(E[:-1], self.params))])
        return Plan(s=problem.grid.s_nodes.copy(), t=t, E=E,
                    a=sol.x[lay.a].copy(), j=sol.x[lay.j].copy(),
                    F=sol.x[lay.f].copy(), F_brk=sol.x[lay.f_brk].copy(),
                    ds=problem.grid.ds)

    def rti_step(self, zeta: float, state, e_hat, lam, warm=None, beta=None):
        """One QP, beta-blended linearisation update and the applied control.

        Returns (plan, e_hat_next, sol) or (None, None, None) when the
        remaining horizon is empty.
        """
        if zeta >= self.profile.route_length - 1e-9:
            return None, None, None
        grid = self.grid_at(zeta)
        sol, problem = self.solve_horizon(grid, state, e_hat, lam, warm)
        plan = self.extract_plan(problem, sol, state[0])
        b = self.config.beta if beta is None else beta
        e_hat_next = e_hat + b * (plan.E - e_hat)
        return plan, e_hat_next, sol

    def sqp_solve(self, zeta: float, state, lam, e_hat=None, beta=None,
                  max_iter=None, rel_tol=None):
        """Full SQP at frozen zeta: iterate QPs until the true cost settles.

        The linearisation step starts at beta and halves (at most three
        times) whenever an iterate's true cost increases. Returns the last
        plan plus the per-iteration true-cost history (lambda-adjoined).
        """
        beta = self.config.beta if beta is None else beta
        max_iter = self.config.sqp_max_iter if max_iter is None else max_iter
        rel_tol = self.config.sqp_rel_tol if rel_tol is None else rel_tol
        grid = self.grid_at(zeta)
        if e_hat is None:
            e_hat = self.e_hat_from_heuristic(grid)
        coeffs_l = self.coeffs.with_lambda(lam)
        costs = []
        plan = None
        warm = None
        halvings = 0
        for _ in range(max_iter):
            sol, problem = self.solve_horizon(grid, state, e_hat, lam, warm)
            warm = (sol.x, sol.nu, sol.mu)
            plan = self.extract_plan(problem, sol, state[0])
            cost = plan.cost(coeffs_l, self.params)
            step = beta
            if costs and cost > costs[-1] and halvings < 3:
                step = beta * 0.5 ** (halvings + 1)
                halvings += 1
            costs.append(cost)
            e_hat = e_hat + step * (plan.E - e_hat)
            if len(costs) >= 2 and abs(costs[-1] - costs[-2]) <= rel_tol * max(1.0, abs(costs[-1])):
                break
        return plan, e_hat, np.asarray(costs)


def estimate_lambda_max(ctrl: HorizonController, state, t_budget: float,
                        seed_lambda: float = None) -> tuple:
    """Doubling search for a travel-time price that brackets the root of f.

    Returns the first lambda whose optimal horizon time beats the budget
    (f < 0) together with that f value. Keeping lambda_max at the bracket,
    rather than at full speed saturation, keeps the chord slope of the Newton
    update steep; f(lambda) flattens out far beyond the root, where a shallow
    chord would make the damped Newton steps overshoot.
    """
    lam = seed_lambda if seed_lambda else ctrl.coeffs.c_eg * ctrl.power_fit.p0
    e_hat = None
    for _ in range(32):
        plan, e_hat, _ = ctrl.sqp_solve(0.0, state, lam, e_hat=e_hat)
        f_val = plan.t_end - t_budget
        if f_val < 0.0:
            return lam, f_val
        lam *= 2.0
    return lam, f_val


def solve_route(ctrl: HorizonController, state=None, lam=None, f_tol=0.5,
                max_newton=40):
    """Frozen-horizon reference solve from zeta = 0.

    Converges the SQP and, when lam is None, also the travel-time price
    (Newton iterations until the predicted arrival sits within f_tol seconds
    of the budget, or the price pins at zero). Returns (plan, lam).
    """
    state = initial_state(ctrl) if state is None else state
    if lam is not None:
        plan, _, _ = ctrl.sqp_solve(0.0, state, lam)
        return plan, lam
    grid0 = ctrl.grid_at(0.0)
    t_h = ctrl.budget(0.0, state[0], grid0, ctrl.t_f)
    plan_free, e_hat, _ = ctrl.sqp_solve(0.0, state, 0.0)
    f_max = plan_free.t_end - t_h
    if f_max <= 0.0:
        return plan_free, 0.0
    lam_max, f_min = estimate_lambda_max(ctrl, state, t_h)
    est = CostateEstimator.warm_start(lam_max, f_max=f_max, f_min=f_min)
    plan = plan_free
    for _ in range(max_newton):
        plan, e_hat, _ = ctrl.sqp_solve(0.0, state, est.lam, e_hat=e_hat)
        f_val = plan.t_end - t_h
        if abs(f_val) <= f_tol or (est.lam == 0.0 and f_val < 0.0):
            break
        est.update(f_val)
    return plan, est.lam


def plan_to_trajectory(ctrl: HorizonController, plan: Plan) -> Trajectory:
    """Pad a horizon plan into a full Trajectory record (controls held at the end)."""
    n = plan.s.size - 1
    j = np.concatenate([plan.j, plan.j[-1:]])
    F = np.concatenate([plan.F, plan.F[-1:]])
    fb = np.concatenate([plan.F_brk, plan.F_brk[-1:]])
    v = speed_of(plan.E, ctrl.params)
    gear = ctrl.gear_map.gear_at(plan.E, F + fb)
    return Trajectory(s=plan.s, t=plan.t, E=plan.E, v=v, a=plan.a, j=j, F=F,
                      F_brk=fb, gear=gear, ds=plan.ds)


@dataclass
class MpcResult:
    trajectory: Trajectory
    updates: list
    lam_history: np.ndarray
    f_history: np.ndarray
    arrival_time: float
    t_budget: float
    metrics: dict
    feasibility: dict = None


def initial_state(ctrl: HorizonController) -> tuple:
    """(t0, E0, a0): enter the route at the heuristic speed, zero accel."""
    return (0.0, kinetic_energy(ctrl.v_hg[0], ctrl.params), 0.0)


def run_mpc(ctrl: HorizonController, state0=None) -> MpcResult:
    """Closed loop: measure, one QP, costate step, apply, advance.

    The plant is the exact discrete model (forward Euler at ds). Returns the
    closed-loop trajectory, per-update log records and summary metrics.
    """
    cfg = ctrl.config
    profile = ctrl.profile
    params = ctrl.params
    ds = ctrl.ds
    n_total = int(round(profile.route_length / ds))
    state = initial_state(ctrl) if state0 is None else state0
    t_f = ctrl.t_f
    bump_index = (int(round(cfg.tf_bump_at * n_total))
                  if cfg.tf_bump_at is not None else None)

    # startup: endpoint solves for the costate chord
    grid0 = ctrl.grid_at(0.0)
    t_h0 = ctrl.budget(0.0, state[0], grid0, t_f)
    plan_free, e_hat_free, _ = ctrl.sqp_solve(0.0, state, 0.0)
    f_max = plan_free.t_end - t_h0
    lam_max = cfg.lambda_max
    if lam_max is None:
        lam_max, f_min = estimate_lambda_max(ctrl, state, t_h0)
    else:
        plan_fast, _, _ = ctrl.sqp_solve(0.0, state, lam_max)
        f_min = plan_fast.t_end - t_h0
    est = CostateEstimator.warm_start(lam_max, f_max=f_max, f_min=f_min)

    e_hat = kinetic_energy(np.interp(grid0.s_nodes, ctrl.s_hg, ctrl.v_hg), params)
    warm = None

    rec_s, rec_t, rec_E, rec_a = [], [], [], []
    rec_j, rec_F, rec_Fb = [], [], []
    updates = []
    lam_hist, f_hist = [], []
    feas_max = {}
    check_feas = None
    if cfg.collect_feasibility:
        from .oracle import nlp_feasibility_check
        check_feas = nlp_feasibility_check

    idx = 0
    while idx < n_total:
        zeta = idx * ds
        if bump_index is not None and idx == bump_index:
            t_f = t_f + cfg.tf_bump_delta
        grid = ctrl.grid_at(zeta)
        e_hat = _align_e_hat(e_hat, grid, ctrl)
        if warm is not None:
            warm = _align_warm(warm, grid)

        lam = est.lam
        t_solve0 = time.perf_counter()
        if cfg.rti:
            plan, e_hat_next, sol = ctrl.rti_step(zeta, state, e_hat, lam, warm=warm)
        else:
            plan, e_hat_next, _costs = ctrl.sqp_solve(zeta, state, lam, e_hat=e_hat)
            sol = None
        solve_time = time.perf_counter() - t_solve0

        if check_feas is not None:
            rep = check_feas(plan, profile, params, ctrl.force_fit, ctrl.gear_map)
            for key, val in rep.items():
                feas_max[key] = max(feas_max.get(key, 0.0), val)

        # costate step (frozen near the route end where f is ill-conditioned)
        t_h = ctrl.budget(zeta, state[0], grid, t_f)
        f_val = plan.t_end - t_h
        if grid.n >= cfg.freeze_tail_intervals:
            est.update(f_val)
        lam_hist.append(lam)
        f_hist.append(f_val)

        updates.append({
            "update": idx, "zeta_m": zeta, "lambda_eur_per_s": lam,
            "f_s": f_val, "qp_iterations": sol.iterations if sol is not None else -1,
            "objective_eur": sol.objective if sol is not None else plan.cost(
                ctrl.coeffs.with_lambda(lam), params),
            "solve_time_s": solve_time,
            "degraded": bool(getattr(sol, "degraded", False)) if sol is not None else False,
        })

        # apply the first dzeta_intervals controls to the exact plant
        steps = min(cfg.dzeta_intervals, grid.n, n_total - idx)
        t, e, a = state
        for q in range(steps):
            j_q = float(plan.j[q])
            fb_q = float(plan.F_brk[q])
            f_alpha = grade_resistance(profile.grade_at(zeta + (q + 0.5) * ds), params)
            force = params.mass * a + params.drag_slope * e - fb_q + f_alpha
            rec_s.append(zeta + q * ds)
            rec_t.append(t)
            rec_E.append(e)
            rec_a.append(a)
            rec_j.append(j_q)
            rec_F.append(force)
            rec_Fb.append(fb_q)
            t = t + ds * time_slope(e, params)
            e = e + ds * params.mass * a
            a = a + ds * j_q
        state = (t, e, a)
        # primal-only warm start for the next update: shift the plan forward
        warm = (_plan_to_x(plan, steps), None, None) if cfg.rti else None
        e_hat = e_hat_next[steps:] if e_hat_next.size > steps else e_hat_next
        idx += steps

    # terminal sample
    rec_s.append(profile.route_length)
    rec_t.append(state[0])
    rec_E.append(state[1])
    rec_a.append(state[2])
    rec_j.append(rec_j[-1])
    f_alpha_end = grade_resistance(profile.grade_at(profile.route_length), params)
    rec_F.append(params.mass * state[2] + params.drag_slope * state[1] + f_alpha_end)
    rec_Fb.append(0.0)

    E_arr = np.asarray(rec_E)
    F_arr = np.asarray(rec_F)
    Fb_arr = np.asarray(rec_Fb)
    v_arr = speed_of(E_arr, params)
    gear = ctrl.gear_map.gear_at(E_arr, F_arr + Fb_arr)
    traj = Trajectory(s=np.asarray(rec_s), t=np.asarray(rec_t), E=E_arr, v=v_arr,
                      a=np.asarray(rec_a), j=np.asarray(rec_j), F=F_arr,
                      F_brk=Fb_arr, gear=np.asarray(gear), ds=ds)
    metrics = trajectory_metrics(traj, ctrl.coeffs, params)
    metrics["arrival_time_s"] = state[0]
    metrics["t_budget_s"] = t_f
    return MpcResult(trajectory=traj, updates=updates,
                     lam_history=np.asarray(lam_hist), f_history=np.asarray(f_hist),
                     arrival_time=state[0], t_budget=t_f, metrics=metrics,
                     feasibility=feas_max if cfg.collect_feasibility else None)


def _align_e_hat(e_hat, grid, ctrl):
    """Fit the (already shifted) linearisation trajectory to the new horizon.

    Shrinking horizons only truncate; moving horizons also extend the tail
    from the heuristic profile.
    """
    want = grid.n + 1
    if e_hat.size == want:
        return e_hat
    if e_hat.size > want:
        return e_hat[:want]
    out = kinetic_energy(np.interp(grid.s_nodes, ctrl.s_hg, ctrl.v_hg), ctrl.params)
    out[:e_hat.size] = e_hat
    return out


def _plan_to_x(plan: Plan, steps: int):
    """Shift a plan forward by `steps` intervals into a primal warm vector."""
    E = plan.E[steps:]
    a = plan.a[steps:]
    j = plan.j[steps:]
    F = plan.F[steps:]
    fb = plan.F_brk[steps:]
    return np.concatenate([E, a, j, F, fb])


def _align_warm(warm, grid):
    """Crop or drop a shifted primal warm start to match the new layout."""
    x = warm[0]
    n = grid.n
    sizes = np.array([n + 1, n + 1, n, n, n])
    # previous-horizon block lengths recovered from the vector size
    m = (x.size - 2) // 5
    if m < n:
        return None
    blocks = np.split(x, np.cumsum([m + 1, m + 1, m, m])) if m != n else None
    if blocks is None:
        return warm
    out = np.concatenate([blocks[0][:n + 1], blocks[1][:n + 1], blocks[2][:n],
                          blocks[3][:n], blocks[4][:n]])
    assert out.size == sizes.sum()
    return (out, None, None)


def heuristic_trajectory(ctrl: HorizonController) -> Trajectory:
    """Trajectory implied by the heuristic velocity profile (reference case).

    States follow E = m v^2 / 2 with forward-Euler-consistent acceleration
    and jerk; positive total force goes to traction, negative to braking.
    """
    params = ctrl.params
    ds = ctrl.ds
    s = ctrl.s_hg
    E = kinetic_energy(ctrl.v_hg, params)
    n = s.size - 1
    a = np.empty(n + 1)
    a[:n] = np.diff(E) / (params.mass * ds)
    a[n] = a[n - 1]
    j = np.empty(n + 1)
    j[:n] = np.diff(a)[:n] / ds
    j[n] = j[n - 1]
    s_mid = s[:-1] + 0.5 * ds
    f_alpha = np.concatenate([grade_resistance(ctrl.profile.grade_at(s_mid), params),
                              [grade_resistance(ctrl.profile.grade_at(s[-1]), params)]])
    total = params.mass * a + params.drag_slope * E + f_alpha
    F = np.maximum(total, 0.0)
    F_brk = np.minimum(total, 0.0)
    t = np.concatenate([[0.0], np.cumsum(ds * time_slope(E[:-1], params))])
    gear = ctrl.gear_map.gear_at(E, total)
    return Trajectory(s=s, t=t, E=E, v=ctrl.v_hg.copy(), a=a, j=j, F=F,
                      F_brk=F_brk, gear=gear, ds=ds)


def trajectory_metrics(traj: Trajectory, coeffs: StageCostCoeffs,
                       params: VehicleParams, w1=None, w2=None) -> dict:
    """Energy / drivability cost split and comfort indices for one trajectory.

    Drivability is priced at (w1, w2) when given, else at the coefficients'
    own weights; energy cost always uses the fitted power model.
    """
    w1 = coeffs.w1 if w1 is None else w1
    w2 = coeffs.w2 if w2 is None else w2
    n = traj.s.size - 1
    ds = np.diff(traj.s)
    E, a, j, F = traj.E[:n], traj.a[:n], traj.j[:n], traj.F[:n]
    lam_free = coeffs.with_lambda(0.0).with_weights(0.0, 0.0)
    energy = float(np.sum(ds * np.asarray(
        stage_cost(E, a, j, F, lam_free, params))))
    drivability = float(np.sum(ds * (w1 * a ** 2 + w2 * j ** 2)))
    return {
        "energy_cost_eur": energy,
        "drivability_cost_eur": drivability,
        "total_cost_eur": energy + drivability,
        "j_rms_time": rms_jerk(traj),
        "j_rms_space": rms_jerk_space(traj),
        "brake_norm_n": brake_norm(traj),
    }
