"""Vehicle and road domain types plus the distance-domain kinematic relations.

All quantities are SI internally (m, s, kg, J, N, rad, EUR). The planner works
in the kinetic-energy domain: speed v is replaced by E = m v^2 / 2 and
distance s is the independent variable, which is exact as long as the vehicle
keeps moving forward. Aerodynamic drag is linear in E,

    F_air(E) = rho_a c_d A_f v^2 / 2 = (rho_a c_d A_f / m) E,

so the longitudinal dynamics over distance are affine in the states:

    t'(s) = sqrt(m / (2 E)),   E'(s) = m a,   a'(s) = j,
    a = (F + F_brk - F_air(E) - F_alpha(s)) / m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RouteRangeError

# Minimum speed used to floor kinetic energy so 1/sqrt(E) stays conditioned.
V_FLOOR = 1.0  # m/s


@dataclass(frozen=True)
class VehicleParams:
    """Chassis, resistance and comfort parameters of the vehicle.

    transmission_ratios must be strictly decreasing: a higher gear index means
    a lower ratio. Comfort jerk bounds are in the space domain (da/ds,
    (m/s^2)/m); brake_floor is the most negative total braking force.
    """

    mass: float = 40000.0            # kg
    frontal_area: float = 10.0       # m^2
    drag_coeff: float = 0.5          # -
    air_density: float = 1.29        # kg/m^3
    rolling_coeff: float = 0.006     # -
    gravity: float = 9.81            # m/s^2
    wheel_radius: float = 0.50       # m
    final_gear_ratio: float = 3.0    # -
    transmission_ratios: tuple = (1.0,)   # per gear, strictly decreasing
    a_lo: float = -1.5               # m/s^2 comfort floor
    a_hi: float = 1.5                # m/s^2 comfort cap
    j_lo: float = -0.045             # (m/s^2)/m comfort floor
    j_hi: float = 0.045              # (m/s^2)/m comfort cap
    brake_floor: float = -150e3      # N, <= 0

    def __post_init__(self):
        if min(self.mass, self.frontal_area, self.drag_coeff, self.air_density,
               self.wheel_radius, self.final_gear_ratio) <= 0.0:
            raise DomainError("mass, geometry and drag parameters must be positive")
        if self.rolling_coeff < 0.0:
            raise DomainError("rolling_coeff must be nonnegative")
        ratios = tuple(float(r) for r in self.transmission_ratios)
        if len(ratios) == 0 or any(r <= 0.0 for r in ratios):
            raise DomainError("transmission_ratios must be positive")
        if any(b <= a for a, b in zip(ratios[1:], ratios[:-1])):
            raise DomainError("transmission_ratios must be strictly decreasing")
        object.__setattr__(self, "transmission_ratios", ratios)
        if not (self.a_lo < 0.0 < self.a_hi):
            raise DomainError("comfort acceleration bounds must straddle zero")
        if not (self.j_lo < 0.0 < self.j_hi):
            raise DomainError("comfort jerk bounds must straddle zero")
        if self.brake_floor > 0.0:
            raise DomainError("brake_floor must be <= 0")

    @property
    def c_a(self) -> float:
        """Drag lump rho_a c_d A_f / 2 (kg/m); F_air = c_a v^2."""
        return 0.5 * self.air_density * self.drag_coeff * self.frontal_area

    @property
    def drag_slope(self) -> float:
        """dF_air/dE = rho_a c_d A_f / m (1/m); F_air = drag_slope * E."""
        return 2.0 * self.c_a / self.mass

    @property
    def n_gears(self) -> int:
        return len(self.transmission_ratios)

    def gear_radius(self, gear: int) -> float:
        """Effective rolling radius R(gear) = r_w / (r_tg(gear) r_fg), in m.

        gear is 1-based; v = omega R(gear) and F = M / R(gear).
        """
        if not 1 <= gear <= self.n_gears:
            raise DomainError(f"gear {gear} out of range 1..{self.n_gears}")
        return self.wheel_radius / (self.transmission_ratios[gear - 1] * self.final_gear_ratio)


@dataclass(frozen=True)
class RoadProfile:
    """Distance-gridded grade and speed limits.

    Grade and limits are piecewise constant on [s_i, s_{i+1}); the value at a
    query position is the one of the interval containing it. Effective limits
    combine road and traffic: v_min = max of the minima, v_max = min of the
    maxima, and v_min must stay strictly positive (nonstop forward motion).
    """

    position: np.ndarray        # m, strictly increasing, first 0
    grade: np.ndarray           # rad
    v_min_road: np.ndarray      # m/s
    v_max_road: np.ndarray      # m/s
    v_min_traffic: np.ndarray = None
    v_max_traffic: np.ndarray = None
    v_min: np.ndarray = field(init=False, default=None)
    v_max: np.ndarray = field(init=False, default=None)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.ndim != 1 or pos.size < 2:
            raise DomainError("profile needs at least two samples")
        if pos[0] != 0.0 or np.any(np.diff(pos) <= 0.0):
            raise DomainError("positions must be strictly increasing and start at 0")
        object.__setattr__(self, "position", pos)
        for name in ("grade", "v_min_road", "v_max_road"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != pos.shape:
                raise DomainError(f"{name} must match position shape")
            object.__setattr__(self, name, arr)
        for name in ("v_min_traffic", "v_max_traffic"):
            arr = getattr(self, name)
            if arr is None:
                arr = self.v_min_road if name == "v_min_traffic" else self.v_max_road
            arr = np.asarray(arr, dtype=float)
            if arr.shape != pos.shape:
                raise DomainError(f"{name} must match position shape")
            object.__setattr__(self, name, arr)
        v_min = np.maximum(self.v_min_road, self.v_min_traffic)
        v_max = np.minimum(self.v_max_road, self.v_max_traffic)
        if np.any(v_min <= 0.0):
            raise DomainError("effective v_min must be positive everywhere")
        if np.any(v_min >= v_max):
            raise DomainError("effective v_min must stay below v_max")
        if np.any(~np.isfinite(self.grade)) or np.any(np.abs(self.grade) >= 0.5 * math.pi):
            raise DomainError("grade must be finite and below 90 degrees")
        object.__setattr__(self, "v_min", v_min)
        object.__setattr__(self, "v_max", v_max)

    @property
    def route_length(self) -> float:
        return float(self.position[-1])

    def _interval_index(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any(s < self.position[0]) or np.any(s > self.position[-1]):
            raise RouteRangeError(f"position outside route [0, {self.route_length}] m")
        idx = np.searchsorted(self.position, s, side="right") - 1
        return np.clip(idx, 0, self.position.size - 2)

    def grade_at(self, s):
        return self.grade[self._interval_index(s)]

    def v_min_at(self, s):
        return self.v_min[self._interval_index(s)]

    def v_max_at(self, s):
        return self.v_max[self._interval_index(s)]


@dataclass(frozen=True)
class State:
    """Planner state at one position: time (s), kinetic energy (J), accel (m/s^2)."""

    t: float
    E: float
    a: float

    def __post_init__(self):
        if self.E <= 0.0:
            raise DomainError("kinetic energy must be positive")
        if self.t < 0.0:
            raise DomainError("time must be nonnegative")


@dataclass(frozen=True)
class Control:
    """Space-domain jerk ((m/s^2)/m) and total braking force (N, <= 0)."""

    j: float
    F_brk: float

    def __post_init__(self):
        if self.F_brk > 0.0:
            raise DomainError("braking force must be <= 0")


@dataclass(frozen=True)
class Trajectory:
    """Distance-indexed record of states, controls and forces.

    Controls (j, F, F_brk) may be one sample shorter than states when they
    live on intervals; arrays are kept as provided.
    """

    s: np.ndarray        # m
    t: np.ndarray        # s
    E: np.ndarray        # J
    v: np.ndarray        # m/s
    a: np.ndarray        # m/s^2
    j: np.ndarray        # (m/s^2)/m
    F: np.ndarray        # N
    F_brk: np.ndarray    # N, <= 0
    gear: np.ndarray     # 1-based, 0 where undefined
    ds: float            # m, nominal sample interval

    def __post_init__(self):
        for name in ("s", "t", "E", "v", "a", "j", "F", "F_brk", "gear"):
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        if np.any(np.diff(self.t) <= 0.0):
            raise DomainError("time must be strictly increasing along the route")

    @property
    def n_samples(self) -> int:
        return self.s.size


def kinetic_energy(v, params: VehicleParams):
    """E = m v^2 / 2 (J) for speed v > 0 (m/s)."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0.0):
        raise DomainError("speed must be positive")
    out = 0.5 * params.mass * v * v
    return float(out) if out.ndim == 0 else out


def speed_of(E, params: VehicleParams):
    """Inverse transform v = sqrt(2 E / m) (m/s) for E > 0 (J)."""
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0.0):
        raise DomainError("kinetic energy must be positive")
    out = np.sqrt(2.0 * E / params.mass)
    return float(out) if out.ndim == 0 else out


def energy_floor(v_min, params: VehicleParams):
    """Lower bound on E used in all bound sets: m max(v_min, 1 m/s)^2 / 2."""
    v = np.maximum(np.asarray(v_min, dtype=float), V_FLOOR)
    out = 0.5 * params.mass * v * v
    return float(out) if out.ndim == 0 else out


def resistive_forces(E, s, profile: RoadProfile, params: VehicleParams):
    """Aerodynamic and grade/rolling resistance at (E, s).

    Returns (F_air, F_alpha) in N with F_air = drag_slope * E (= c_a v^2) and
    F_alpha = m g (sin(alpha) + c_r cos(alpha)).
    """
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0.0):
        raise DomainError("kinetic energy must be positive")
    alpha = profile.grade_at(s)
    f_air = params.drag_slope * E
    f_alpha = params.mass * params.gravity * (
        np.sin(alpha) + params.rolling_coeff * np.cos(alpha))
    if np.ndim(f_air) == 0 and np.ndim(f_alpha) == 0:
        return float(f_air), float(f_alpha)
    return f_air, f_alpha


def grade_resistance(alpha, params: VehicleParams):
    """F_alpha = m g (sin(alpha) + c_r cos(alpha)) for a known grade (rad)."""
    alpha = np.asarray(alpha, dtype=float)
    out = params.mass * params.gravity * (
        np.sin(alpha) + params.rolling_coeff * np.cos(alpha))
    return float(out) if out.ndim == 0 else out


def traction_force(a, E, F_brk, s, profile: RoadProfile, params: VehicleParams):
    """Traction force implied by the longitudinal balance: F = m a + F_air + F_alpha - F_brk."""
    a = np.asarray(a, dtype=float)
    f_air, f_alpha = resistive_forces(E, s, profile, params)
    out = params.mass * a + f_air - np.asarray(F_brk, dtype=float) + f_alpha
    return float(out) if np.ndim(out) == 0 else out


def accel_of(F, E, F_brk, s, profile: RoadProfile, params: VehicleParams):
    """Acceleration from the force balance; exact inverse of traction_force."""
    f_air, f_alpha = resistive_forces(E, s, profile, params)
    out = (np.asarray(F, dtype=float) + np.asarray(F_brk, dtype=float)
           - f_air - f_alpha) / params.mass
    return float(out) if np.ndim(out) == 0 else out


def accel_limits(E, s, force_limits, profile: RoadProfile, params: VehicleParams):
    """Acceleration band at (E, s) combining comfort and powertrain force limits.

    force_limits must expose f_max(E) and f_min(E) (N, vectorised over E).
    Returns (a_min, a_max); a_min may exceed a_max at infeasible points
    (e.g. a climb too steep for the powertrain), which the caller must handle.
    """
    E = np.asarray(E, dtype=float)
    f_air, f_alpha = resistive_forces(E, s, profile, params)
    a_max = np.minimum(
        params.a_hi,
        (force_limits.f_max(E) - f_air - f_alpha) / params.mass)
    a_min = np.maximum(
        params.a_lo,
        (force_limits.f_min(E) - f_air + params.brake_floor - f_alpha) / params.mass)
    if np.ndim(a_min) == 0 and np.ndim(a_max) == 0:
        return float(a_min), float(a_max)
    return a_min, a_max


def time_slope(E, params: VehicleParams):
    """dt/ds = sqrt(m / (2 E)) = 1/v (s/m), strictly decreasing and convex in E."""
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0.0):
        raise DomainError("kinetic energy must be positive")
    out = np.sqrt(0.5 * params.mass / E)
    return float(out) if out.ndim == 0 else out
