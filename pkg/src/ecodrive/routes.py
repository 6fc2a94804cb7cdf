"""Road-profile ingestion (CSV) and seeded synthetic route generation."""

from __future__ import annotations

import csv
import math

import numpy as np

from .errors import ParseError
from .model import RoadProfile

KMH = 1.0 / 3.6  # km/h -> m/s


def synthetic_route(length_m: float = 118e3, seed: int = 42, ds: float = 100.0,
                    v_min_kmh: float = 60.0, v_max_kmh: float = 90.0,
                    grade_scale: float = 1.0) -> RoadProfile:
    """Rolling-hills route: a few sinusoidal grade components with random phases.

    The first and last ~2 km taper to flat so the vehicle starts and ends on
    level ground. Identical (seed, parameters) give identical profiles.
    """
    rng = np.random.default_rng(seed)
    n = int(round(length_m / ds)) + 1
    s = np.linspace(0.0, length_m, n)
    amps = np.array([0.016, 0.012, 0.008]) * grade_scale
    waves = np.array([9000.0, 3700.0, 1700.0])
    phases = rng.uniform(0.0, 2.0 * math.pi, size=3)
    grade = sum(a * np.sin(2.0 * math.pi * s / w + p)
                for a, w, p in zip(amps, waves, phases))
    taper = np.clip(s / 2000.0, 0.0, 1.0) * np.clip((length_m - s) / 2000.0, 0.0, 1.0)
    grade = grade * taper
    ones = np.ones_like(s)
    return RoadProfile(position=s, grade=grade,
                       v_min_road=v_min_kmh * KMH * ones,
                       v_max_road=v_max_kmh * KMH * ones)


def ingest_road(path) -> RoadProfile:
    """Parse a road CSV into a validated profile.

    Expected header: distance_m plus either elevation_m or grade_rad, with
    optional vmin_kmh / vmax_kmh columns. Elevation is converted once to
    per-interval grades alpha = atan(dh/ds); the last sample repeats the
    final interval's grade. Raises ParseError with the offending line number.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file") from None
        header = [c.strip().lower() for c in header]
        if "distance_m" not in header:
            raise ParseError("missing required column distance_m", line=1)
        has_elev = "elevation_m" in header
        has_grade = "grade_rad" in header
        if not (has_elev or has_grade):
            raise ParseError("need either elevation_m or grade_rad column", line=1)
        col = {name: header.index(name) for name in header}
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) < len(header):
                raise ParseError("row has fewer fields than the header", line=lineno)
            try:
                vals = {name: float(raw[i]) for name, i in col.items() if raw[i].strip() != ""}
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", line=lineno) from None
            if "distance_m" not in vals:
                raise ParseError("missing distance_m value", line=lineno)
            if any(not math.isfinite(v) for v in vals.values()):
                raise ParseError("non-finite value", line=lineno)
            vals["_line"] = lineno
            rows.append(vals)

    if len(rows) < 2:
        raise ParseError("need at least two samples")
    dist = np.array([r["distance_m"] for r in rows])
    for i in range(1, len(rows)):
        if dist[i] <= dist[i - 1]:
            raise ParseError("distance_m not strictly increasing", line=rows[i]["_line"])
    if dist[0] != 0.0:
        raise ParseError("first distance_m must be 0", line=rows[0]["_line"])

    if all("grade_rad" in r for r in rows):
        grade = np.array([r["grade_rad"] for r in rows])
    elif all("elevation_m" in r for r in rows):
        elev = np.array([r["elevation_m"] for r in rows])
        seg = np.arctan2(np.diff(elev), np.diff(dist))
        grade = np.concatenate([seg, seg[-1:]])
    else:
        bad = next(r for r in rows if "grade_rad" not in r and "elevation_m" not in r)
        raise ParseError("missing elevation/grade value", line=bad["_line"])

    def speed_column(name, default_kmh):
        out = np.full(len(rows), default_kmh)
        for i, r in enumerate(rows):
            if name in r:
                out[i] = r[name]
        return out * KMH

    v_min = speed_column("vmin_kmh", 5.0)
    v_max = speed_column("vmax_kmh", 90.0)
    return RoadProfile(position=dist, grade=grade, v_min_road=v_min, v_max_road=v_max)
