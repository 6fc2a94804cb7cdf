"""Run configuration (YAML), artifact bundles and result file writers."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import presets, serialize
from .errors import ParseError
from .model import RoadProfile, Trajectory, VehicleParams
from .powertrain import (KIND_CV, KIND_EV, ForceLimitFit, GearMap, PowerFit,
                         fit_force_limits, fit_power_poly, optimise_gear_map,
                         power_fit_samples, synth_actuator_map, wheel_transform)
from .routes import KMH, ingest_road, synthetic_route

CASES = ("hg", "case1", "case2")


def _merge(base: dict, override) -> dict:
    out = dict(base)
    for key, val in (override or {}).items():
        if key not in base:
            raise ParseError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val)
        else:
            out[key] = val
    return out


DEFAULT_CONFIG = {
    "vehicle": {
        "kind": KIND_CV,
        "mass_kg": 40000.0,
        "frontal_area_m2": 10.0,
        "drag_coeff": 0.5,
        "air_density_kgpm3": 1.29,
        "rolling_coeff": 0.006,
        "wheel_radius_m": 0.50,
        "final_gear_ratio": 3.0,
        "transmission_ratios": None,     # defaults chosen by kind
        "a_min_mps2": -1.5,
        "a_max_mps2": 1.5,
        "j_min_per_m": -0.045,
        "j_max_per_m": 0.045,
        "brake_floor_n": -150e3,
    },
    "powertrain": {
        "rated_power_w": None,           # default by kind
        "omega_idle_radps": None,
        "omega_max_radps": None,
        "artifacts_dir": None,
    },
    "route": {
        "csv": None,
        "length_m": 118e3,
        "seed": 42,
        "sample_m": 100.0,
        "v_min_kmh": 60.0,
        "v_max_kmh": 90.0,
        "grade_scale": 1.0,
    },
    "costs": {
        "fuel_eur_per_litre": presets.FUEL_PRICE_EUR_PER_L,
        "electricity_eur_per_kwh": presets.ELECTRICITY_PRICE_EUR_PER_KWH,
    },
    "mpc": {
        "mode": "shmpc",
        "s_hmax_m": None,                # null = unbounded (shrinking horizon)
        "n_route_samples": 400,
        "v_cru_kmh": 80.0,
        "beta": 1.0,
        "w1": 0.0,
        "w2_case2": None,                # default by kind
        "rti": True,
        "freeze_tail_intervals": 10,
        "tf_bump_at": None,
        "tf_bump_delta_s": 0.0,
    },
    "oracle": {
        "segment_start_m": 30e3,
        "segment_length_m": 6e3,
        "n_intervals": 20,
        "n_e": 60,
        "n_a": 51,
        "lambda_t": None,                # null = use the route's converged price
    },
    "sweep": {
        "w2_values": [0.0, 300.0, 1000.0, 3000.0, 10000.0, 30000.0],
    },
    "case": "case1",
}

W2_CASE2_DEFAULT = {KIND_CV: 1000.0, KIND_EV: 100.0}


@dataclass
class RunConfig:
    """Validated, unit-converted run configuration."""

    raw: dict
    kind: str
    params: VehicleParams
    actuator: dict
    c_eg: float
    w2_case2: float
    case: str

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        data = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
            if not isinstance(data, dict):
                raise ParseError("config must be a YAML mapping")
        cfg = _merge(DEFAULT_CONFIG, data)
        cfg = _merge(cfg, overrides or {})
        veh = cfg["vehicle"]
        kind = veh["kind"]
        if kind not in (KIND_CV, KIND_EV):
            raise ParseError(f"vehicle.kind must be cv or ev, got {kind!r}")
        ratios = veh["transmission_ratios"]
        if ratios is None:
            ratios = presets.params_for(kind).transmission_ratios
        params = VehicleParams(
            mass=float(veh["mass_kg"]), frontal_area=float(veh["frontal_area_m2"]),
            drag_coeff=float(veh["drag_coeff"]), air_density=float(veh["air_density_kgpm3"]),
            rolling_coeff=float(veh["rolling_coeff"]), wheel_radius=float(veh["wheel_radius_m"]),
            final_gear_ratio=float(veh["final_gear_ratio"]),
            transmission_ratios=tuple(ratios),
            a_lo=float(veh["a_min_mps2"]), a_hi=float(veh["a_max_mps2"]),
            j_lo=float(veh["j_min_per_m"]), j_hi=float(veh["j_max_per_m"]),
            brake_floor=float(veh["brake_floor_n"]))
        spec = presets.actuator_spec(kind)
        pt = cfg["powertrain"]
        actuator = dict(
            kind=kind,
            rated_power=float(pt["rated_power_w"] or spec["rated_power"]),
            omega_idle=float(pt["omega_idle_radps"] if pt["omega_idle_radps"] is not None
                             else spec["omega_idle"]),
            omega_max=float(pt["omega_max_radps"] or spec["omega_max"]))
        if kind == KIND_CV:
            c_eg = presets.fuel_price_per_joule(float(cfg["costs"]["fuel_eur_per_litre"]))
        else:
            c_eg = presets.electricity_price_per_joule(float(cfg["costs"]["electricity_eur_per_kwh"]))
        w2_case2 = cfg["mpc"]["w2_case2"]
        w2_case2 = W2_CASE2_DEFAULT[kind] if w2_case2 is None else float(w2_case2)
        case = cfg["case"]
        if case not in CASES:
            raise ParseError(f"case must be one of {CASES}, got {case!r}")
        return cls(raw=cfg, kind=kind, params=params, actuator=actuator,
                   c_eg=c_eg, w2_case2=w2_case2, case=case)

    def road_profile(self) -> RoadProfile:
        r = self.raw["route"]
        if r["csv"]:
            return ingest_road(r["csv"])
        return synthetic_route(length_m=float(r["length_m"]), seed=int(r["seed"]),
                               ds=float(r["sample_m"]), v_min_kmh=float(r["v_min_kmh"]),
                               v_max_kmh=float(r["v_max_kmh"]),
                               grade_scale=float(r["grade_scale"]))

    def mpc_config(self, w2=0.0, **extra):
        from .mpc import MpcConfig
        m = self.raw["mpc"]
        kwargs = dict(
            mode=m["mode"],
            s_hmax=float(m["s_hmax_m"]) if m["s_hmax_m"] else math.inf,
            n_route_samples=int(m["n_route_samples"]),
            v_cru=float(m["v_cru_kmh"]) * KMH,
            beta=float(m["beta"]), w1=float(m["w1"]), w2=w2,
            rti=bool(m["rti"]),
            freeze_tail_intervals=int(m["freeze_tail_intervals"]),
            tf_bump_at=(float(m["tf_bump_at"]) if m["tf_bump_at"] is not None else None),
            tf_bump_delta=float(m["tf_bump_delta_s"]))
        kwargs.update(extra)
        return MpcConfig(**kwargs)

    def power_fit_floor(self) -> float:
        """Speed floor of the power fit: where the top gear engages (conventional)."""
        if self.kind == KIND_CV:
            top = self.params.gear_radius(self.params.n_gears)
            return max(presets.V_FLOOR_FIT[KIND_CV],
                       1.05 * top * self.actuator["omega_idle"])
        return presets.V_FLOOR_FIT[KIND_EV]


@dataclass
class ArtifactBundle:
    kind: str
    gear_map: GearMap
    power_fit: PowerFit
    force_fit: ForceLimitFit


def build_artifacts(config: RunConfig, n_e: int = 200, n_f: int = 200) -> ArtifactBundle:
    """Synthesise the actuator map and fit everything the planner needs."""
    actuator = synth_actuator_map(**config.actuator)
    tables = wheel_transform(actuator, config.params, n_e=n_e, n_f=n_f)
    gear_map = optimise_gear_map(tables, config.params)
    v, F, P = power_fit_samples(gear_map, config.params, v_lo=config.power_fit_floor())
    power_fit = fit_power_poly(v, F, P, config.kind)
    force_fit = fit_force_limits(gear_map, config.params,
                                 v_floor=presets.V_FLOOR_FIT[config.kind])
    return ArtifactBundle(kind=config.kind, gear_map=gear_map,
                          power_fit=power_fit, force_fit=force_fit)


def artifact_paths(directory, kind: str) -> dict:
    d = Path(directory)
    return {"gear_map": d / f"{kind}_gear_map.json",
            "power_fit": d / f"{kind}_power_fit.json",
            "force_fit": d / f"{kind}_force_fit.json"}


def save_artifacts(bundle: ArtifactBundle, directory) -> dict:
    Path(directory).mkdir(parents=True, exist_ok=True)
    paths = artifact_paths(directory, bundle.kind)
    serialize.save_json(serialize.gear_map_to_doc(bundle.gear_map), paths["gear_map"])
    serialize.save_json(serialize.power_fit_to_doc(bundle.power_fit), paths["power_fit"])
    serialize.save_json(serialize.force_fit_to_doc(bundle.force_fit), paths["force_fit"])
    return paths


def load_artifacts(directory, kind: str) -> ArtifactBundle:
    paths = artifact_paths(directory, kind)
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise FileNotFoundError(
            f"missing fitted artifacts: {missing}; run `ecodrive fit-maps` first")
    return ArtifactBundle(
        kind=kind,
        gear_map=serialize.gear_map_from_doc(serialize.load_json(paths["gear_map"])),
        power_fit=serialize.power_fit_from_doc(serialize.load_json(paths["power_fit"])),
        force_fit=serialize.force_fit_from_doc(serialize.load_json(paths["force_fit"])))


TRAJECTORY_COLUMNS = ("s_m", "t_s", "v_kmh", "E_J", "a_mps2", "j", "F_N", "F_brk_N", "gear")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for i in range(traj.n_samples):
            writer.writerow([repr(float(traj.s[i])), repr(float(traj.t[i])),
                             repr(float(traj.v[i] / KMH)), repr(float(traj.E[i])),
                             repr(float(traj.a[i])), repr(float(traj.j[i])),
                             repr(float(traj.F[i])), repr(float(traj.F_brk[i])),
                             int(traj.gear[i])])


def write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_update_log(updates: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in updates:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_csv_table(rows: list, header: tuple, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, float) else x for x in row])
