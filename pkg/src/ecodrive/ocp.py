"""Discretisation of the horizon problem and assembly of the convex QP.

States (t is adjoined via the travel-time price and not a decision variable)
live at N+1 nodes, controls at N intervals, forward-Euler dynamics:

    E_{k+1} = E_k + ds m a_k,   a_{k+1} = a_k + ds j_k,
    F_k = m a_k + drag_slope E_k - F_brk_k + F_alpha_k.

The stage cost is convex but not quadratic because of the 1/sqrt(E) term; it
is replaced by its second-order Taylor expansion about the linearisation
trajectory E_hat (positive curvature, so the Hessian stays PSD), while the
reciprocal-speed force limits are replaced by tangents at E_hat. Tangents to
the convex maximum limit under-estimate it and tangents to the concave
electric minimum limit over-estimate it, so the QP feasible set is contained
in the one of the nonlinear problem for any E_hat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConstructionError, DomainError
from .model import RoadProfile, VehicleParams, energy_floor, grade_resistance
from .powertrain import KIND_CV, KIND_EV, ForceLimitFit, PowerFit

ABS_E_FLOOR_SPEED = 1.0  # m/s; keeps 1/sqrt(E) conditioned everywhere


@dataclass(frozen=True)
class StageCostCoeffs:
    """Coefficients of the distance-domain stage cost.

    cost/m = (c_eg p0 + lambda_t) sqrt(m/(2E)) + c_eg (2 p1 / m) E
             + c_eg p2 F + c_eg p3 F^2 + w1 a^2 + w2 j^2
    """

    kind: str
    c_eg: float          # EUR/J
    p0: float            # W
    p1: float            # W/(m/s)^3
    p2: float            # -
    p3: float = 0.0      # 1/N (electric)
    w1: float = 0.0      # EUR s^2/m^3 (per a^2 and metre)
    w2: float = 0.0      # EUR m/s^2-ish (per space-jerk^2 and metre)
    lambda_t: float = 0.0  # EUR/s

    def __post_init__(self):
        if self.c_eg <= 0.0:
            raise DomainError("c_eg must be positive")
        if min(self.w1, self.w2, self.lambda_t) < 0.0:
            raise DomainError("w1, w2 and lambda_t must be nonnegative")

    @classmethod
    def from_power_fit(cls, fit: PowerFit, c_eg: float, w1: float = 0.0,
                       w2: float = 0.0, lambda_t: float = 0.0) -> "StageCostCoeffs":
        return cls(kind=fit.kind, c_eg=c_eg, p0=fit.p0, p1=fit.p1, p2=fit.p2,
                   p3=fit.p3 if fit.kind == KIND_EV else 0.0,
                   w1=w1, w2=w2, lambda_t=lambda_t)

    def with_lambda(self, lambda_t: float) -> "StageCostCoeffs":
        return StageCostCoeffs(kind=self.kind, c_eg=self.c_eg, p0=self.p0,
                               p1=self.p1, p2=self.p2, p3=self.p3,
                               w1=self.w1, w2=self.w2, lambda_t=lambda_t)

    def with_weights(self, w1: float, w2: float) -> "StageCostCoeffs":
        return StageCostCoeffs(kind=self.kind, c_eg=self.c_eg, p0=self.p0,
                               p1=self.p1, p2=self.p2, p3=self.p3,
                               w1=w1, w2=w2, lambda_t=self.lambda_t)


def stage_cost(E, a, j, F, coeffs: StageCostCoeffs, params: VehicleParams,
               include_lambda: bool = True):
    """Exact (pre-quadraticisation) stage cost in EUR/m."""
    E = np.asarray(E, float)
    floor = 0.5 * params.mass * ABS_E_FLOOR_SPEED ** 2
    if np.any(E < floor - 1e-9):
        raise DomainError("kinetic energy below the conditioning floor")
    lam = coeffs.lambda_t if include_lambda else 0.0
    c_sq = (coeffs.c_eg * coeffs.p0 + lam) * math.sqrt(0.5 * params.mass)
    out = (c_sq / np.sqrt(E)
           + coeffs.c_eg * (2.0 * coeffs.p1 / params.mass) * E
           + coeffs.c_eg * coeffs.p2 * np.asarray(F, float)
           + coeffs.c_eg * coeffs.p3 * np.asarray(F, float) ** 2
           + coeffs.w1 * np.asarray(a, float) ** 2
           + coeffs.w2 * np.asarray(j, float) ** 2)
    return float(out) if np.ndim(out) == 0 else out


def discretized_cost(E, a, j, F, ds, coeffs: StageCostCoeffs, params: VehicleParams,
                     include_lambda: bool = True) -> float:
    """Sum of ds * stage_cost over intervals; controls may be one shorter than states."""
    n = np.asarray(j).size
    cost = stage_cost(np.asarray(E, float)[:n], np.asarray(a, float)[:n],
                      j, np.asarray(F, float)[:n], coeffs, params, include_lambda)
    return float(np.sum(ds * cost))


def linearize_sqrt_term(e_hat):
    """Tangent coefficients (intercept, slope) of f(E) = 1/sqrt(E) about e_hat.

    f_lin(E) = intercept + slope E with f_lin <= f everywhere (f is convex),
    touching at E = e_hat.
    """
    e_hat = np.asarray(e_hat, float)
    if np.any(e_hat <= 0.0):
        raise DomainError("linearisation point must be positive")
    inv_sqrt = 1.0 / np.sqrt(e_hat)
    slope = -0.5 * inv_sqrt / e_hat
    intercept = 1.5 * inv_sqrt
    if np.ndim(e_hat) == 0:
        return float(intercept), float(slope)
    return intercept, slope


@dataclass(frozen=True)
class HorizonGrid:
    """Per-horizon discretisation data.

    f_alpha, v_min, v_max are per interval (piecewise-constant profile sampled
    at interval midpoints); e_lo / e_hi are node-wise kinetic-energy bounds
    with the conditioning floor applied.
    """

    start: float
    ds: float
    n: int
    s_nodes: np.ndarray
    f_alpha: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    e_lo: np.ndarray
    e_hi: np.ndarray

    @property
    def s_h(self) -> float:
        return self.n * self.ds

    @classmethod
    def build(cls, profile: RoadProfile, params: VehicleParams, start: float,
              ds: float, s_hmax: float = math.inf) -> "HorizonGrid":
        s_f = profile.route_length
        if not 0.0 <= start < s_f:
            raise ConstructionError("horizon start outside the route")
        s_h = min(s_hmax, s_f - start)
        n = int(round(s_h / ds))
        if abs(n * ds - s_h) > 1e-6 * ds:
            if s_hmax < s_f - start:
                n = int(s_h / ds)  # moving window floored to whole intervals
            else:
                raise ConstructionError(
                    f"horizon length {s_h} m is not a multiple of ds={ds} m")
        if n < 1:
            raise ConstructionError("horizon shorter than one interval")
        s_nodes = start + ds * np.arange(n + 1)
        s_mid = s_nodes[:-1] + 0.5 * ds
        f_alpha = grade_resistance(profile.grade_at(s_mid), params)
        v_min = profile.v_min_at(s_mid)
        v_max = profile.v_max_at(s_mid)
        v_min_nodes = profile.v_min_at(np.minimum(s_nodes, s_f))
        v_max_nodes = profile.v_max_at(np.minimum(s_nodes, s_f))
        e_lo = energy_floor(v_min_nodes, params)
        e_hi = 0.5 * params.mass * v_max_nodes ** 2
        if np.any(e_lo >= e_hi):
            raise ConstructionError("energy floor exceeds the upper speed bound")
        return cls(start=start, ds=ds, n=n, s_nodes=s_nodes, f_alpha=f_alpha,
                   v_min=v_min, v_max=v_max, e_lo=e_lo, e_hi=e_hi)


@dataclass(frozen=True)
class LinearizedLimits:
    """Affine force/acceleration limit rows linearised about E_hat.

    The maximum traction limit min(cap, y0 + y1 sqrt(m/2)/sqrt(E)) becomes two
    separate affine rows per interval (cap row and tangent row); the electric
    minimum limit mirrors it. tangent rows are F <= t_int[k] + t_slope[k] E.
    """

    kind: str
    f_cap_max: float
    t_int: np.ndarray      # (n,) tangent intercepts, max limit
    t_slope: np.ndarray    # (n,) tangent slopes (<= 0), max limit
    f_cap_min: float
    b_int: np.ndarray      # (n,) tangent intercepts, min limit (electric)
    b_slope: np.ndarray    # (n,) tangent slopes (>= 0), min limit

    def f_lin_max(self, E, k):
        return np.minimum(self.f_cap_max, self.t_int[k] + self.t_slope[k] * np.asarray(E, float))

    def f_lin_min(self, E, k):
        if self.kind == KIND_CV:
            return np.zeros_like(np.asarray(E, float))
        return np.maximum(self.f_cap_min, self.b_int[k] + self.b_slope[k] * np.asarray(E, float))


def linearized_limits(e_hat, fit: ForceLimitFit, grid: HorizonGrid,
                      params: VehicleParams) -> LinearizedLimits:
    """Tangent rows of the fitted force limits at each interval's E_hat."""
    e_hat = np.asarray(e_hat, float)
    if e_hat.size != grid.n + 1:
        raise ConstructionError("e_hat must have one entry per node")
    eh = e_hat[:-1]
    intercept, slope = linearize_sqrt_term(eh)
    c_y = fit.y1 * math.sqrt(0.5 * params.mass)
    t_int = fit.y0 + c_y * intercept
    t_slope = c_y * slope
    if fit.kind == KIND_EV:
        c_x = fit.x1 * math.sqrt(0.5 * params.mass)
        b_int = fit.x0 + c_x * intercept
        b_slope = c_x * slope
        f_cap_min = fit.f_cap_min
    else:
        b_int = np.zeros(grid.n)
        b_slope = np.zeros(grid.n)
        f_cap_min = 0.0
    return LinearizedLimits(kind=fit.kind, f_cap_max=fit.f_cap_max,
                            t_int=t_int, t_slope=t_slope,
                            f_cap_min=f_cap_min, b_int=b_int, b_slope=b_slope)


@dataclass(frozen=True)
class QpLayout:
    """Index slices of the decision vector [E, a, j, F, F_brk]."""

    n: int

    @property
    def n_var(self) -> int:
        return 5 * self.n + 2

    @property
    def e(self) -> slice:
        return slice(0, self.n + 1)

    @property
    def a(self) -> slice:
        return slice(self.n + 1, 2 * self.n + 2)

    @property
    def j(self) -> slice:
        return slice(2 * self.n + 2, 3 * self.n + 2)

    @property
    def f(self) -> slice:
        return slice(3 * self.n + 2, 4 * self.n + 2)

    @property
    def f_brk(self) -> slice:
        return slice(4 * self.n + 2, 5 * self.n + 2)


@dataclass(frozen=True)
class QpProblem:
    """Assembled convex quadratic subproblem (immutable).

    min 1/2 x'Hx + g'x + obj_const  s.t.  Ax = b, Gx <= h, with the layout
    in layout. e_hat records the linearisation trajectory.
    """

    H: sp.csr_matrix
    g: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    obj_const: float
    layout: QpLayout
    grid: HorizonGrid
    coeffs: StageCostCoeffs
    e_hat: np.ndarray
    limits: LinearizedLimits = None

    def dump(self) -> str:
        """Deterministic sparse-triplet text listing for cross-solver debugging."""
        lines = [f"# qp n_var={self.layout.n_var} m_eq={self.b.size} m_in={self.h.size}"]
        for name, mat in (("H", self.H), ("A", self.A), ("G", self.G)):
            coo = sp.coo_matrix(mat)
            order = np.lexsort((coo.col, coo.row))
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                lines.append(f"{name} {r} {c} {v!r}")
        for name, vec in (("g", self.g), ("b", self.b), ("h", self.h)):
            for i, v in enumerate(vec):
                lines.append(f"{name} {i} {v!r}")
        lines.append(f"const {self.obj_const!r}")
        return "\n".join(lines) + "\n"


def assemble_qp(grid: HorizonGrid, coeffs: StageCostCoeffs, fit: ForceLimitFit,
                e_hat, initial_state, params: VehicleParams) -> QpProblem:
    """Build the banded convex QP for one horizon.

    initial_state is (E0, a0); travel time enters only through lambda_t in the
    cost. e_hat must hold N+1 entries at or above the conditioning floor.
    """
    n = grid.n
    lay = QpLayout(n)
    e_hat = np.asarray(e_hat, float)
    if e_hat.size != n + 1:
        raise ConstructionError("e_hat must have one entry per node")
    floor = 0.5 * params.mass * ABS_E_FLOOR_SPEED ** 2
    if np.any(e_hat < floor - 1e-9):
        raise ConstructionError("e_hat below the conditioning floor")
    e0, a0 = float(initial_state[0]), float(initial_state[1])

    ds = grid.ds
    m = params.mass
    drag = params.drag_slope
    idx_e = np.arange(n + 1)
    idx_a = lay.a.start + np.arange(n + 1)
    idx_j = lay.j.start + np.arange(n)
    idx_f = lay.f.start + np.arange(n)
    idx_fb = lay.f_brk.start + np.arange(n)

    # --- cost -------------------------------------------------------------
    h_diag = np.zeros(lay.n_var)
    g = np.zeros(lay.n_var)
    const = 0.0

    c_sq = (coeffs.c_eg * coeffs.p0 + coeffs.lambda_t) * math.sqrt(0.5 * m)
    eh = e_hat[:-1]
    phi = c_sq / np.sqrt(eh)
    dphi = -0.5 * phi / eh
    d2phi = 0.75 * phi / eh ** 2
    h_diag[idx_e[:-1]] += ds * d2phi
    g[idx_e[:-1]] += ds * (dphi - d2phi * eh)
    const += float(np.sum(ds * (phi - dphi * eh + 0.5 * d2phi * eh ** 2)))

    g[idx_e[:-1]] += ds * coeffs.c_eg * 2.0 * coeffs.p1 / m
    g[idx_f] += ds * coeffs.c_eg * coeffs.p2
    h_diag[idx_f] += ds * 2.0 * coeffs.c_eg * coeffs.p3
    h_diag[idx_a[:-1]] += ds * 2.0 * coeffs.w1
    h_diag[idx_j] += ds * 2.0 * coeffs.w2

    H = sp.diags(h_diag, format="csr")

    # --- equality constraints (triplet blocks, vectorised) -------------------
    ar = np.arange(n)
    rows = np.concatenate([
        np.repeat(ar, 3),                       # E dynamics
        np.repeat(n + ar, 3),                   # a dynamics
        np.repeat(2 * n + ar, 4),               # force definition
        [3 * n, 3 * n + 1],                     # initial conditions
    ])
    cols = np.concatenate([
        np.stack([idx_e[1:], idx_e[:-1], idx_a[:-1]], axis=1).ravel(),
        np.stack([idx_a[1:], idx_a[:-1], idx_j], axis=1).ravel(),
        np.stack([idx_f, idx_a[:-1], idx_e[:-1], idx_fb], axis=1).ravel(),
        [idx_e[0], idx_a[0]],
    ])
    vals = np.concatenate([
        np.tile([1.0, -1.0, -ds * m], n),
        np.tile([1.0, -1.0, -ds], n),
        np.tile([1.0, -m, -drag, 1.0], n),
        [1.0, 1.0],
    ])
    b = np.concatenate([np.zeros(2 * n), grid.f_alpha, [e0, a0]])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(b.size, lay.n_var))

    # --- inequality rows ------------------------------------------------------
    lim = linearized_limits(e_hat, fit, grid, params)
    rb = _RowBuilder()
    ones = np.ones(n)
    # node E and comfort boxes (node 0 pinned by the initial equality)
    rb.single(idx_e[1:], 1.0, grid.e_hi[1:])
    rb.single(idx_e[1:], -1.0, -grid.e_lo[1:])
    rb.single(idx_a[1:], 1.0, params.a_hi * ones)
    rb.single(idx_a[1:], -1.0, -params.a_lo * ones)
    # control boxes
    rb.single(idx_j, 1.0, params.j_hi * ones)
    rb.single(idx_j, -1.0, -params.j_lo * ones)
    rb.single(idx_fb, 1.0, 0.0 * ones)
    rb.single(idx_fb, -1.0, -params.brake_floor * ones)
    # traction force limits: cap row plus tangent row per interval
    rb.single(idx_f, 1.0, lim.f_cap_max * ones)
    rb.pair(idx_f, ones, idx_e[:-1], -lim.t_slope, lim.t_int)
    if coeffs.kind == KIND_CV:
        rb.single(idx_f, -1.0, 0.0 * ones)
    else:
        rb.single(idx_f, -1.0, -lim.f_cap_min * ones)
        rb.pair(idx_f, -ones, idx_e[:-1], lim.b_slope, -lim.b_int)
    # force-based acceleration rows at interior nodes (total force channel)
    ki = np.arange(1, n)
    oi = np.ones(ki.size)
    fa = grid.f_alpha[ki]
    rb.pair(idx_a[ki], m * oi, idx_e[ki], drag * oi, lim.f_cap_max - fa)
    rb.pair(idx_a[ki], m * oi, idx_e[ki], drag - lim.t_slope[ki], lim.t_int[ki] - fa)
    if coeffs.kind == KIND_CV:
        rb.pair(idx_a[ki], -m * oi, idx_e[ki], -drag * oi, fa - params.brake_floor)
    else:
        rb.pair(idx_a[ki], -m * oi, idx_e[ki], -drag * oi,
                fa - params.brake_floor - lim.f_cap_min)
        rb.pair(idx_a[ki], -m * oi, idx_e[ki], -drag + lim.b_slope[ki],
                fa - params.brake_floor - lim.b_int[ki])

    G, h_vec = rb.build(lay.n_var)
    return QpProblem(H=H, g=g, A=A, b=b, G=G, h=h_vec,
                     obj_const=const, layout=lay, grid=grid, coeffs=coeffs,
                     e_hat=e_hat.copy(), limits=lim)


class _RowBuilder:
    """Accumulates vectorised inequality rows as COO triplets."""

    def __init__(self):
        self._r = []
        self._c = []
        self._v = []
        self._rhs = []
        self._m = 0

    def single(self, cols, coeff, rhs):
        k = len(cols)
        rr = self._m + np.arange(k)
        self._r.append(rr)
        self._c.append(np.asarray(cols))
        self._v.append(np.broadcast_to(np.asarray(coeff, float), (k,)))
        self._rhs.append(np.asarray(rhs, float))
        self._m += k

    def pair(self, cols1, coeff1, cols2, coeff2, rhs):
        k = len(cols1)
        rr = self._m + np.arange(k)
        self._r.extend([rr, rr])
        self._c.extend([np.asarray(cols1), np.asarray(cols2)])
        self._v.extend([np.broadcast_to(np.asarray(coeff1, float), (k,)),
                        np.broadcast_to(np.asarray(coeff2, float), (k,))])
        self._rhs.append(np.asarray(rhs, float))
        self._m += k

    def build(self, n_var):
        G = sp.csr_matrix(
            (np.concatenate(self._v),
             (np.concatenate(self._r), np.concatenate(self._c))),
            shape=(self._m, n_var))
        return G, np.concatenate(self._rhs)
