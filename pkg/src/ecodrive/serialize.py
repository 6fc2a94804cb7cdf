"""Versioned JSON (de)serialisation of the fitted powertrain artifacts.

Documents carry a schema tag and version; arrays are stored as flat lists plus
an explicit shape. Round-trips are lossless: floats are emitted with Python's
shortest-repr JSON encoding, which reproduces IEEE-754 doubles exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ParseError
from .powertrain import ForceLimitFit, GearMap, PowerFit

SCHEMA_GEAR_MAP = "ecodrive.gear_map"
SCHEMA_POWER_FIT = "ecodrive.power_fit"
SCHEMA_FORCE_FIT = "ecodrive.force_limit_fit"
VERSION = 1


def _array_doc(arr):
    arr = np.asarray(arr)
    data = arr.ravel()
    if arr.dtype.kind == "f":
        # JSON has no NaN literal; encode as None
        data = [None if np.isnan(x) else float(x) for x in data]
    elif arr.dtype.kind == "b":
        data = [bool(x) for x in data]
    else:
        data = [int(x) for x in data]
    return {"shape": list(arr.shape), "data": data}


def _array_from_doc(doc, dtype=float):
    _require(isinstance(doc, dict) and "shape" in doc and "data" in doc,
             "array entries need shape and data")
    data = [np.nan if x is None else x for x in doc["data"]]
    arr = np.asarray(data, dtype=dtype)
    shape = tuple(doc["shape"])
    _require(arr.size == int(np.prod(shape)), "array data does not match shape")
    return arr.reshape(shape)


def _require(cond, message):
    if not cond:
        raise ParseError(message)


def _check_header(doc, schema):
    _require(isinstance(doc, dict), "document must be a JSON object")
    _require(doc.get("schema") == schema,
             f"expected schema {schema!r}, got {doc.get('schema')!r}")
    _require(doc.get("version") == VERSION,
             f"unsupported version {doc.get('version')!r}")


def gear_map_to_doc(gm: GearMap) -> dict:
    return {
        "schema": SCHEMA_GEAR_MAP, "version": VERSION, "kind": gm.kind,
        "e_grid": _array_doc(gm.e_grid), "f_grid": _array_doc(gm.f_grid),
        "gear": _array_doc(gm.gear), "feasible": _array_doc(gm.feasible),
        "power": _array_doc(gm.power),
        "f_gamma_max": _array_doc(gm.f_gamma_max),
        "f_gamma_min": _array_doc(gm.f_gamma_min),
        "f_a_min": _array_doc(gm.f_a_min),
        "brake_floor": gm.brake_floor,
    }


def gear_map_from_doc(doc) -> GearMap:
    _check_header(doc, SCHEMA_GEAR_MAP)
    e_grid = _array_from_doc(doc["e_grid"])
    f_grid = _array_from_doc(doc["f_grid"])
    gear = _array_from_doc(doc["gear"], dtype=np.int32)
    feasible = _array_from_doc(doc["feasible"], dtype=bool)
    power = _array_from_doc(doc["power"])
    shape = (e_grid.size, f_grid.size)
    _require(gear.shape == shape and feasible.shape == shape and power.shape == shape,
             "grid tables must be (n_e, n_f)")
    return GearMap(kind=doc["kind"], e_grid=e_grid, f_grid=f_grid, gear=gear,
                   feasible=feasible, power=power,
                   f_gamma_max=_array_from_doc(doc["f_gamma_max"]),
                   f_gamma_min=_array_from_doc(doc["f_gamma_min"]),
                   f_a_min=_array_from_doc(doc["f_a_min"]),
                   brake_floor=float(doc["brake_floor"]))


def power_fit_to_doc(fit: PowerFit) -> dict:
    return {
        "schema": SCHEMA_POWER_FIT, "version": VERSION, "kind": fit.kind,
        "coefficients": [fit.p0, fit.p1, fit.p2, fit.p3],
        "v_lo": fit.v_lo, "v_hi": fit.v_hi,
        "max_rel_residual": fit.max_rel_residual,
        "mean_rel_residual": fit.mean_rel_residual,
    }


def power_fit_from_doc(doc) -> PowerFit:
    _check_header(doc, SCHEMA_POWER_FIT)
    coeffs = doc.get("coefficients")
    _require(isinstance(coeffs, list) and len(coeffs) == 4, "need 4 coefficients")
    return PowerFit(kind=doc["kind"], p0=float(coeffs[0]), p1=float(coeffs[1]),
                    p2=float(coeffs[2]), p3=float(coeffs[3]),
                    v_lo=float(doc["v_lo"]), v_hi=float(doc["v_hi"]),
                    max_rel_residual=float(doc["max_rel_residual"]),
                    mean_rel_residual=float(doc["mean_rel_residual"]))


def force_fit_to_doc(fit: ForceLimitFit) -> dict:
    return {
        "schema": SCHEMA_FORCE_FIT, "version": VERSION, "kind": fit.kind,
        "y0": fit.y0, "y1": fit.y1, "f_cap_max": fit.f_cap_max,
        "x0": fit.x0, "x1": fit.x1, "f_cap_min": fit.f_cap_min,
        "v_floor": fit.v_floor, "v_max_fit": fit.v_max_fit,
    }


def force_fit_from_doc(doc) -> ForceLimitFit:
    _check_header(doc, SCHEMA_FORCE_FIT)
    for key in ("y0", "y1", "f_cap_max", "x0", "x1", "f_cap_min", "v_floor", "v_max_fit"):
        _require(key in doc, f"missing field {key!r}")
    return ForceLimitFit(kind=doc["kind"], y0=float(doc["y0"]), y1=float(doc["y1"]),
                         f_cap_max=float(doc["f_cap_max"]), x0=float(doc["x0"]),
                         x1=float(doc["x1"]), f_cap_min=float(doc["f_cap_min"]),
                         v_floor=float(doc["v_floor"]), v_max_fit=float(doc["v_max_fit"]))


def save_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
