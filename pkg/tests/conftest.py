import numpy as np
import pytest

from ecodrive import presets
from ecodrive.mpc import HorizonController, MpcConfig
from ecodrive.powertrain import (fit_force_limits, fit_power_poly,
                                 optimise_gear_map, power_fit_samples,
                                 synth_actuator_map, wheel_transform)
from ecodrive.routes import synthetic_route


class Setup:
    """One powertrain kind fully fitted, shared across a session."""

    def __init__(self, kind):
        self.kind = kind
        self.params = presets.params_for(kind)
        self.actuator = synth_actuator_map(**presets.actuator_spec(kind))
        self.tables = wheel_transform(self.actuator, self.params)
        self.gear_map = optimise_gear_map(self.tables, self.params)
        if kind == "cv":
            v_lo = 1.05 * self.params.gear_radius(self.params.n_gears) * self.actuator.omega_idle
        else:
            v_lo = presets.V_FLOOR_FIT[kind]
        v, F, P = power_fit_samples(self.gear_map, self.params, v_lo=v_lo)
        self.power_fit = fit_power_poly(v, F, P, kind)
        self.force_fit = fit_force_limits(self.gear_map, self.params,
                                          v_floor=presets.V_FLOOR_FIT[kind])
        self.c_eg = presets.energy_price(kind)

    def controller(self, profile, **mpc_kwargs) -> HorizonController:
        ds = mpc_kwargs.pop("ds", None)
        return HorizonController(profile, self.params, self.power_fit,
                                 self.force_fit, self.gear_map, self.c_eg,
                                 MpcConfig(**mpc_kwargs), ds=ds)


@pytest.fixture(scope="session")
def cv():
    return Setup("cv")


@pytest.fixture(scope="session")
def ev():
    return Setup("ev")


@pytest.fixture(scope="session")
def route():
    return synthetic_route()


@pytest.fixture(scope="session")
def short_route():
    """12 km cut of the standard terrain for fast closed-loop tests."""
    return synthetic_route(length_m=12e3, seed=42)


@pytest.fixture(scope="session")
def flat_route():
    return synthetic_route(length_m=12e3, seed=0, grade_scale=0.0)
