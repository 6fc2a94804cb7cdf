"""Default vehicle and powertrain parameter sets used by the CLI and tests.

The chassis numbers follow a loaded 40 t tractor-trailer; the two powertrains
are a 350 kW diesel with a 12-speed gearbox and a 300 kW single-speed electric
drive. Energy prices are converted to EUR/J at config time (diesel via density
0.832 kg/l and a 42.6 MJ/kg heating value).
"""

from __future__ import annotations

import numpy as np

from .model import VehicleParams
from .powertrain import KIND_CV, KIND_EV

DIESEL_DENSITY_KG_PER_L = 0.832
DIESEL_LHV_J_PER_KG = 42.6e6

FUEL_PRICE_EUR_PER_L = 1.51
ELECTRICITY_PRICE_EUR_PER_KWH = 0.18


def fuel_price_per_joule(eur_per_litre: float = FUEL_PRICE_EUR_PER_L) -> float:
    return eur_per_litre / (DIESEL_DENSITY_KG_PER_L * DIESEL_LHV_J_PER_KG)


def electricity_price_per_joule(eur_per_kwh: float = ELECTRICITY_PRICE_EUR_PER_KWH) -> float:
    return eur_per_kwh / 3.6e6


def cv_params() -> VehicleParams:
    # 12-speed, geometric steps from 11.0 down to 0.8
    ratios = tuple(11.0 * (0.8 / 11.0) ** (i / 11.0) for i in range(12))
    return VehicleParams(transmission_ratios=ratios)


def ev_params() -> VehicleParams:
    return VehicleParams(transmission_ratios=(3.4,))


CV_ACTUATOR = dict(kind=KIND_CV, rated_power=350e3, omega_idle=60.0, omega_max=220.0)
EV_ACTUATOR = dict(kind=KIND_EV, rated_power=300e3, omega_idle=10.0, omega_max=950.0)

# speed floors of the force-limit fits (8 km/h conventional, 55 km/h electric)
V_FLOOR_FIT = {KIND_CV: 8.0 / 3.6, KIND_EV: 55.0 / 3.6}


def actuator_spec(kind: str) -> dict:
    return dict(CV_ACTUATOR if kind == KIND_CV else EV_ACTUATOR)


def params_for(kind: str) -> VehicleParams:
    return cv_params() if kind == KIND_CV else ev_params()


def energy_price(kind: str) -> float:
    return fuel_price_per_joule() if kind == KIND_CV else electricity_price_per_joule()
