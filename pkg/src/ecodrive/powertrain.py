"""Powertrain maps, offline gear optimisation and convex surrogate fits.

The pipeline is: synthesise a static actuator map (a Willans-line diesel model
or an electric machine with quadratic losses), transform it to wheel-level
tables per gear, pre-optimise the gear choice on an (E, F) grid, then fit

  * a nonnegative-coefficient polynomial for the gear-optimal internal power,
    P(v, F) ~ p0 + p1 v^3 + p2 v F (+ p3 v F^2 for the electric case), and
  * reciprocal-speed force-limit curves y0 + y1/v (and x0 + x1/v for the
    electric minimum limit) that stay inside the tabulated limits for
    v >= v_floor, obtained from a small linear program.

Everything here is pure and offline; the fitted artifacts are what the online
planner consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import nnls

from .errors import ConstructionError, FitError
from .model import VehicleParams, speed_of

KIND_CV = "cv"
KIND_EV = "ev"

Q_LHV_DIESEL = 42.6e6  # J/kg


@dataclass(frozen=True)
class ActuatorMap:
    """Static actuator map over a (rotational speed, torque) grid.

    power holds the internal power drawn from the storage unit: fuel chemical
    power (mass rate times heating value) for a combustion engine, electric
    battery power for an electric machine. Negative torque rows of an electric
    map carry negative power where recuperation wins over losses.
    """

    kind: str
    omega: np.ndarray          # rad/s, increasing
    torque: np.ndarray         # Nm, increasing
    power: np.ndarray          # W, shape (n_omega, n_torque)
    m_max: np.ndarray          # Nm >= 0 per omega
    m_min: np.ndarray          # Nm <= 0 per omega (all zero for cv)
    m_brk: np.ndarray          # Nm <= 0 per omega, additional brake (cv); zeros for ev
    omega_idle: float
    omega_max: float
    q_lhv: float = 0.0         # J/kg, cv only
    gen: dict = field(default_factory=dict)  # generator coefficients, for tests

    def __post_init__(self):
        if self.kind not in (KIND_CV, KIND_EV):
            raise ConstructionError(f"unknown powertrain kind {self.kind!r}")
        if not np.all(np.isfinite(self.power)):
            raise ConstructionError("power table must be finite")

    def power_at(self, omega, torque):
        """Bilinear interpolation of the internal power table."""
        interp = RegularGridInterpolator(
            (self.omega, self.torque), self.power, bounds_error=False, fill_value=None)
        pts = np.stack(np.broadcast_arrays(np.asarray(omega, float),
                                           np.asarray(torque, float)), axis=-1)
        out = interp(pts)
        return float(out[()]) if out.ndim == 0 or out.size == 1 else out

    def efficiency(self, omega, torque):
        """Mechanical output over internal power (motoring side)."""
        p = self.power_at(omega, torque)
        return np.asarray(omega) * np.asarray(torque) / p


def synth_actuator_map(kind: str, rated_power: float, omega_idle: float,
                       omega_max: float, n_omega: int = 60, n_torque: int = 60) -> ActuatorMap:
    """Generate a plausible static map for a conventional or electric actuator.

    The conventional map is a Willans line P = e0(omega) + e1 M omega with a
    cubic speed-dependent loss offset, so efficiency is poor at low speed and
    load and peaks at mid speed / high torque. The electric map uses
    P = M omega + k0 + k1 omega^2 + k2 M^2, symmetric over motoring and
    generating torque with a constant-torque-then-constant-power envelope.
    """
    if rated_power <= 0.0:
        raise ConstructionError("rated_power must be positive")
    if not 0.0 <= omega_idle < omega_max:
        raise ConstructionError("need 0 <= omega_idle < omega_max")
    omega = np.linspace(max(omega_idle, 1e-6), omega_max, n_omega)

    if kind == KIND_CV:
        omega_base = omega_idle + 0.45 * (omega_max - omega_idle)
        m_rated = rated_power / omega_base
        e1 = 1.0 / 0.46                       # inverse indicated efficiency
        q0 = 0.015 * rated_power              # constant loss offset, W
        q3 = 0.080 * rated_power / omega_max ** 3
        m_max = np.minimum(m_rated, rated_power / omega)
        m_brk = -m_rated * (0.10 + 0.55 * (omega - omega_idle) / (omega_max - omega_idle))
        torque = np.linspace(0.0, m_rated, n_torque)
        ww, mm = np.meshgrid(omega, torque, indexing="ij")
        power = q0 + q3 * ww ** 3 + e1 * mm * ww
        return ActuatorMap(
            kind=kind, omega=omega, torque=torque, power=power,
            m_max=m_max, m_min=np.zeros_like(omega), m_brk=m_brk,
            omega_idle=omega_idle, omega_max=omega_max, q_lhv=Q_LHV_DIESEL,
            gen={"e1": e1, "q0": q0, "q3": q3, "m_rated": m_rated})

    if kind == KIND_EV:
        omega_base = max(omega_idle + 1e-9, 0.18 * omega_max)
        m_rated = rated_power / omega_base
        k0 = 0.003 * rated_power
        k1 = 0.040 * rated_power / omega_max ** 2
        k2 = 0.060 * rated_power / m_rated ** 2
        m_max = np.minimum(m_rated, rated_power / np.maximum(omega, omega_base * 1e-3))
        m_min = -m_max
        torque = np.linspace(-m_rated, m_rated, n_torque)
        ww, mm = np.meshgrid(omega, torque, indexing="ij")
        power = mm * ww + k0 + k1 * ww ** 2 + k2 * mm ** 2
        return ActuatorMap(
            kind=kind, omega=omega, torque=torque, power=power,
            m_max=m_max, m_min=m_min, m_brk=np.zeros_like(omega),
            omega_idle=omega_idle, omega_max=omega_max, q_lhv=0.0,
            gen={"k0": k0, "k1": k1, "k2": k2, "m_rated": m_rated})

    raise ConstructionError(f"unknown powertrain kind {kind!r}")


@dataclass(frozen=True)
class WheelTables:
    """Actuator map resampled to wheel level on a common (E, F) grid, per gear."""

    kind: str
    e_grid: np.ndarray           # J
    f_grid: np.ndarray           # N, spans [brake_floor, max traction]
    power: np.ndarray            # W, (n_gears, nE, nF); NaN infeasible
    f_max: np.ndarray            # N, (n_gears, nE); NaN where E out of gear window
    f_min: np.ndarray            # N, (n_gears, nE)
    f_brk: np.ndarray            # N <= 0, (n_gears, nE); additional brake (cv)
    e_ranges: np.ndarray         # J, (n_gears, 2) = [E_lo, E_hi] per gear

    @property
    def n_gears(self) -> int:
        return self.power.shape[0]


def wheel_transform(actuator: ActuatorMap, params: VehicleParams,
                    n_e: int = 200, n_f: int = 200) -> WheelTables:
    """Translate the actuator map to the wheel side for every gear.

    For gear g with radius R(g): v = omega R(g), F = M / R(g), so the kinetic
    energy window is (m/2) [omega_idle^2, omega_max^2] R(g)^2 and torque
    limits divide by R(g).
    """
    m = params.mass
    n_gears = params.n_gears
    radii = np.array([params.gear_radius(g) for g in range(1, n_gears + 1)])
    omega_lo = max(actuator.omega_idle, actuator.omega[0])
    e_ranges = 0.5 * m * np.stack(
        [(omega_lo * radii) ** 2, (actuator.omega_max * radii) ** 2], axis=1)

    # log spacing: gear windows scale multiplicatively with R(gear)^2, so a
    # geometric grid covers every gear with a comparable number of points
    e_grid = np.geomspace(e_ranges[:, 0].min(), e_ranges[:, 1].max(), n_e)
    f_traction_hi = max(np.max(actuator.m_max) / r for r in radii)
    f_grid = np.linspace(params.brake_floor, f_traction_hi, n_f)

    interp = RegularGridInterpolator(
        (actuator.omega, actuator.torque), actuator.power,
        bounds_error=False, fill_value=np.nan)

    power = np.full((n_gears, n_e, n_f), np.nan)
    f_max = np.full((n_gears, n_e), np.nan)
    f_min = np.full((n_gears, n_e), np.nan)
    f_brk = np.full((n_gears, n_e), np.nan)
    for gi, r in enumerate(radii):
        v = speed_of(e_grid, params)
        omega = v / r
        valid = (omega >= omega_lo - 1e-12) & (omega <= actuator.omega_max + 1e-12)
        if not np.any(valid):
            raise ConstructionError(f"gear {gi + 1} has an empty feasible envelope")
        om_v = np.clip(omega[valid], actuator.omega[0], actuator.omega[-1])
        f_max[gi, valid] = np.interp(om_v, actuator.omega, actuator.m_max) / r
        f_min[gi, valid] = np.interp(om_v, actuator.omega, actuator.m_min) / r
        f_brk[gi, valid] = np.interp(om_v, actuator.omega, actuator.m_brk) / r
        torque = f_grid * r
        ww, mm = np.meshgrid(om_v, torque, indexing="ij")
        pw = interp(np.stack([ww, mm], axis=-1))
        # mask torque outside this gear's limits
        lo = f_min[gi, valid][:, None]
        hi = f_max[gi, valid][:, None]
        inside = (f_grid[None, :] >= lo - 1e-12) & (f_grid[None, :] <= hi + 1e-12)
        pw = np.where(inside, pw, np.nan)
        power[gi, valid, :] = pw

    return WheelTables(kind=actuator.kind, e_grid=e_grid, f_grid=f_grid,
                       power=power, f_max=f_max, f_min=f_min, f_brk=f_brk,
                       e_ranges=e_ranges)


@dataclass(frozen=True)
class GearMap:
    """Offline-optimised gear choice over the (kinetic energy, total force) grid.

    gear holds 1-based indices (0 on infeasible cells). power is the internal
    power at the chosen gear (0 in the conventional braking region where fuel
    is cut, NaN outside the feasible mask). The envelope curves f_gamma_max,
    f_gamma_min and f_a_min are tabulated over e_grid.
    """

    kind: str
    e_grid: np.ndarray
    f_grid: np.ndarray
    gear: np.ndarray             # (nE, nF) int
    feasible: np.ndarray         # (nE, nF) bool
    power: np.ndarray            # (nE, nF) W
    f_gamma_max: np.ndarray      # (nE,) N
    f_gamma_min: np.ndarray      # (nE,) N (zeros for cv)
    f_a_min: np.ndarray          # (nE,) N <= 0 (cv additional brake envelope)
    brake_floor: float           # N <= 0

    def gear_at(self, E, F_total):
        """Nearest-cell gear lookup for reporting."""
        ie = _nearest_index(self.e_grid, E)
        jf = _nearest_index(self.f_grid, F_total)
        return self.gear[ie, jf]

    def envelope_f_max(self, E):
        return np.interp(np.asarray(E, float), self.e_grid, self.f_gamma_max)

    def envelope_f_min(self, E):
        return np.interp(np.asarray(E, float), self.e_grid, self.f_gamma_min)


def optimise_gear_map(tables: WheelTables, params: VehicleParams) -> GearMap:
    """Solve the offline bottom-level gear program on the wheel grid.

    Wherever the actuator can deliver the demanded force, the feasible gear
    with minimum internal power is chosen (ties to the lowest index).
    Conventional negative region, split at the additional-brake envelope
    F_a_min(E): above it the gear with the largest (least negative) additional
    brake force is chosen (avoids down-shifting), below it the one with the
    most negative, service brakes covering the remainder. An electric
    powertrain keeps its single gear everywhere feasible, with service brakes
    extending the map below the recuperation envelope.
    """
    e_grid, f_grid = tables.e_grid, tables.f_grid
    n_e, n_f = e_grid.size, f_grid.size

    f_gamma_max = _nan_reduce(tables.f_max, np.fmax)
    f_gamma_min = (_nan_reduce(tables.f_min, np.fmin)
                   if tables.kind == KIND_EV else np.zeros(n_e))
    f_a_min = (_nan_reduce(tables.f_brk, np.fmin)
               if tables.kind == KIND_CV else np.zeros(n_e))

    # actuator-envelope cells: argmin of internal power over gears
    p_all = np.where(np.isnan(tables.power), np.inf, tables.power)
    best = np.argmin(p_all, axis=0)
    best_p = np.take_along_axis(p_all, best[None], axis=0)[0]
    ok = np.isfinite(best_p)
    gear = np.where(ok, best.astype(np.int32) + 1, 0)
    feasible = ok.copy()
    power = np.where(ok, best_p, np.nan)

    if tables.kind == KIND_EV:
        # service brakes extend the single-gear map below the regen envelope
        p_at_regen = np.full(n_e, np.nan)
        for i in range(n_e):
            sel = np.isfinite(tables.power[0, i])
            if np.any(sel) and np.isfinite(f_gamma_min[i]):
                p_at_regen[i] = np.interp(f_gamma_min[i], f_grid[sel], tables.power[0, i, sel])
        below = f_grid[None, :] < f_gamma_min[:, None]
        ext = (below & (f_grid[None, :] >= f_gamma_min[:, None] + params.brake_floor - 1e-9)
               & np.isfinite(p_at_regen)[:, None])
        gear = np.where(ext, 1, gear)
        feasible |= ext
        power = np.where(ext, p_at_regen[:, None], power)
    else:
        # conventional three-regime rule on negative total force
        any_gear = np.any(np.isfinite(tables.f_brk), axis=0)
        hi_gear = np.argmax(np.where(np.isnan(tables.f_brk), -np.inf, tables.f_brk), axis=0)
        lo_gear = np.argmin(np.where(np.isnan(tables.f_brk), np.inf, tables.f_brk), axis=0)
        neg = f_grid[None, :] < 0.0
        ok_neg = neg & any_gear[:, None] & (f_grid[None, :] >= params.brake_floor - 1e-9)
        mid = f_grid[None, :] >= f_a_min[:, None]   # boundary joins the middle regime
        pick = np.where(mid, hi_gear[:, None], lo_gear[:, None]) + 1
        gear = np.where(ok_neg, pick, gear)
        feasible |= ok_neg
        power = np.where(ok_neg, 0.0, power)        # fuel cut while braking

    return GearMap(kind=tables.kind, e_grid=e_grid, f_grid=f_grid,
                   gear=gear.astype(np.int32), feasible=feasible, power=power,
                   f_gamma_max=f_gamma_max, f_gamma_min=f_gamma_min,
                   f_a_min=f_a_min, brake_floor=params.brake_floor)


def _nan_reduce(arr, op):
    """Reduce over gear axis ignoring NaN; NaN where no gear is valid."""
    out = arr[0].copy()
    for k in range(1, arr.shape[0]):
        out = op(out, arr[k])
    return out


def _nearest_index(grid, x):
    x = np.asarray(x, float)
    idx = np.clip(np.searchsorted(grid, x), 1, grid.size - 1)
    left_closer = np.abs(x - grid[idx - 1]) <= np.abs(grid[idx] - x)
    return np.where(left_closer, idx - 1, idx)


@dataclass(frozen=True)
class PowerFit:
    """Nonnegative polynomial surrogate of the gear-optimal internal power.

    P(v, F) = p0 + p1 v^3 + p2 v F (+ p3 v F^2, electric only), p_i >= 0.
    """

    kind: str
    p0: float
    p1: float
    p2: float
    p3: float
    v_lo: float
    v_hi: float
    max_rel_residual: float
    mean_rel_residual: float

    def predict(self, v, F):
        v = np.asarray(v, float)
        F = np.asarray(F, float)
        out = self.p0 + self.p1 * v ** 3 + self.p2 * v * F + self.p3 * v * F ** 2
        return float(out) if np.ndim(out) == 0 else out


def power_fit_samples(gear_map: GearMap, params: VehicleParams, v_lo: float):
    """Flatten the gear-optimal power grid to (v, F, P) samples on the fit domain.

    Conventional maps fit the positive-force region only; electric maps use the
    full actuator envelope including recuperation.
    """
    v_grid = speed_of(gear_map.e_grid, params)
    keep_e = v_grid >= v_lo
    if gear_map.kind == KIND_CV:
        keep_f = gear_map.f_grid >= 0.0
    else:
        keep_f = np.ones_like(gear_map.f_grid, dtype=bool)
    sub = gear_map.power[np.ix_(keep_e, keep_f)]
    vv, ff = np.meshgrid(v_grid[keep_e], gear_map.f_grid[keep_f], indexing="ij")
    ok = np.isfinite(sub)
    if gear_map.kind == KIND_EV:
        ok &= ff >= np.interp(vv, v_grid, gear_map.f_gamma_min) - 1e-9
    return vv[ok], ff[ok], sub[ok]


def fit_power_poly(v, F, P, kind: str) -> PowerFit:
    """Nonnegative least squares over the basis {1, v^3, vF} (+ {vF^2} electric)."""
    v = np.asarray(v, float).ravel()
    F = np.asarray(F, float).ravel()
    P = np.asarray(P, float).ravel()
    if v.size < 4:
        raise FitError("need at least 4 samples")
    cols = [np.ones_like(v), v ** 3, v * F]
    if kind == KIND_EV:
        cols.append(v * F ** 2)
    A = np.stack(cols, axis=1)
    scale = np.max(np.abs(A), axis=0)
    if np.any(scale == 0.0) or np.linalg.matrix_rank(A / scale) < A.shape[1]:
        raise FitError("degenerate sample set: basis columns are rank deficient")
    coef_scaled, _ = nnls(A / scale, P)
    coef = coef_scaled / scale
    resid = A @ coef - P
    floor = 0.01 * np.max(np.abs(P))
    rel = np.abs(resid) / np.maximum(np.abs(P), floor)
    p = list(coef) + [0.0] * (4 - len(coef))
    return PowerFit(kind=kind, p0=p[0], p1=p[1], p2=p[2], p3=p[3],
                    v_lo=float(v.min()), v_hi=float(v.max()),
                    max_rel_residual=float(rel.max()),
                    mean_rel_residual=float(rel.mean()))


def solve_lp_2var(c, A, b):
    """Maximise c.x subject to A x <= b for x in R^2, by vertex enumeration.

    The optimum of a bounded 2-variable LP lies at the intersection of two
    active constraints. Candidate vertices are visited in decreasing
    objective order, so the first feasible one is the optimum; feasibility is
    checked in vectorised chunks. Raises FitError when no vertex is feasible.
    """
    c = np.asarray(c, float)
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    m = A.shape[0]
    if m < 2:
        raise FitError("need at least two constraints")
    i_idx, j_idx = np.triu_indices(m, k=1)
    det = A[i_idx, 0] * A[j_idx, 1] - A[i_idx, 1] * A[j_idx, 0]
    keep = np.abs(det) > 1e-12 * (np.abs(A[i_idx]).max(axis=1) * np.abs(A[j_idx]).max(axis=1) + 1e-300)
    i_idx, j_idx, det = i_idx[keep], j_idx[keep], det[keep]
    x0 = (b[i_idx] * A[j_idx, 1] - A[i_idx, 1] * b[j_idx]) / det
    x1 = (A[i_idx, 0] * b[j_idx] - b[i_idx] * A[j_idx, 0]) / det
    verts = np.stack([x0, x1], axis=1)
    tol = 1e-7 * (1.0 + np.abs(b).max())
    order = np.argsort(-(verts @ c), kind="stable")
    for lo in range(0, order.size, 1024):
        chunk = order[lo:lo + 1024]
        feas = np.all(verts[chunk] @ A.T <= b[None, :] + tol, axis=1)
        hits = np.flatnonzero(feas)
        if hits.size:
            return verts[chunk[hits[0]]]
    raise FitError("2-variable LP has no feasible vertex")


@dataclass(frozen=True)
class ForceLimitFit:
    """Reciprocal-speed inner approximation of the tabulated force limits.

    f_max(v) = min(f_cap_max, y0 + y1 / v) under-estimates the tabulated
    maximum limit for v >= v_floor; the electric minimum limit mirrors it with
    f_min(v) = max(f_cap_min, x0 + x1 / v), x1 <= 0.
    """

    kind: str
    y0: float
    y1: float
    f_cap_max: float
    x0: float = 0.0
    x1: float = 0.0
    f_cap_min: float = 0.0
    v_floor: float = 0.0
    v_max_fit: float = 0.0

    def f_max_v(self, v):
        out = np.minimum(self.f_cap_max, self.y0 + self.y1 / np.asarray(v, float))
        return float(out) if np.ndim(out) == 0 else out

    def f_min_v(self, v):
        if self.kind == KIND_CV:
            out = np.zeros_like(np.asarray(v, float))
        else:
            out = np.maximum(self.f_cap_min, self.x0 + self.x1 / np.asarray(v, float))
        return float(out) if np.ndim(out) == 0 else out


def fit_force_limits(gear_map: GearMap, params: VehicleParams, v_floor: float,
                     n_constraints: int = 400) -> ForceLimitFit:
    """Fit inner approximations of the tabulated force envelopes above v_floor.

    Maximum limit: maximise the area integral of y0 + y1/v over [v_floor,
    v_max] subject to y0 + y1/v <= F_gamma_max(v) at every sample and y1 >= 0.
    The electric minimum limit mirrors the signs (minimise the integral with
    x0 + x1/v >= F_gamma_min(v), x1 <= 0). Constant caps are the envelope
    extrema over the sampled band.
    """
    v_grid_full = speed_of(gear_map.e_grid, params)
    v_max = float(v_grid_full.max())
    if v_floor >= v_max:
        raise FitError("v_floor must be below the reachable maximum speed")
    v_s = np.union1d(np.linspace(v_floor, v_max, n_constraints),
                     v_grid_full[v_grid_full >= v_floor])
    f_max_s = np.interp(v_s, v_grid_full, gear_map.f_gamma_max)

    # area weights of (y0, y1) over [v_floor, v_max]
    w = np.array([v_max - v_floor, np.log(v_max) - np.log(v_floor)])

    A_rows = np.stack([np.ones_like(v_s), 1.0 / v_s], axis=1)
    A_up = np.vstack([A_rows, [0.0, -1.0]])          # y1 >= 0
    b_up = np.concatenate([f_max_s, [0.0]])
    y0, y1 = solve_lp_2var(w, A_up, b_up)

    x0 = x1 = f_cap_min = 0.0
    if gear_map.kind == KIND_EV:
        f_min_s = np.interp(v_s, v_grid_full, gear_map.f_gamma_min)
        A_lo = np.vstack([-A_rows, [0.0, 1.0]])      # x0 + x1/v >= F_min, x1 <= 0
        b_lo = np.concatenate([-f_min_s, [0.0]])
        x0, x1 = solve_lp_2var(-w, A_lo, b_lo)
        f_cap_min = float(f_min_s.min())

    return ForceLimitFit(kind=gear_map.kind, y0=float(y0), y1=float(y1),
                         f_cap_max=float(f_max_s.max()), x0=float(x0), x1=float(x1),
                         f_cap_min=f_cap_min, v_floor=float(v_floor), v_max_fit=v_max)


class TabulatedForceLimits:
    """Adapter exposing the gear-map envelopes as f_max(E) / f_min(E) in N."""

    def __init__(self, gear_map: GearMap, params: VehicleParams):
        self._map = gear_map
        self._params = params

    def f_max(self, E):
        return self._map.envelope_f_max(E)

    def f_min(self, E):
        return self._map.envelope_f_min(E)


class FittedForceLimits:
    """Adapter exposing the fitted limit curves as f_max(E) / f_min(E) in N."""

    def __init__(self, fit: ForceLimitFit, params: VehicleParams):
        self._fit = fit
        self._params = params

    def f_max(self, E):
        return self._fit.f_max_v(speed_of(E, self._params))

    def f_min(self, E):
        return self._fit.f_min_v(speed_of(E, self._params))
