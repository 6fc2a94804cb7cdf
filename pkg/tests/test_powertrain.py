import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from ecodrive import serialize
from ecodrive.errors import ConstructionError, FitError, ParseError
from ecodrive.model import VehicleParams, kinetic_energy, speed_of
from ecodrive.powertrain import (GearMap, WheelTables, fit_force_limits,
                                 fit_power_poly, optimise_gear_map,
                                 power_fit_samples, solve_lp_2var,
                                 synth_actuator_map, wheel_transform)


def reference_gear_choice(tables: WheelTables, params, i_e, i_f):
    """Per-cell enumerator coded independently of the production path.

    Positive force: scan gears, keep the lowest-index minimum internal power.
    Conventional negative region: the literal three-regime rule on the
    additional-brake envelope.
    """
    f = tables.f_grid[i_f]
    if f >= 0.0 or tables.kind == "ev":
        best_gear, best_p = 0, np.inf
        for g in range(tables.n_gears):
            p = tables.power[g, i_e, i_f]
            if np.isfinite(p) and p < best_p:
                best_gear, best_p = g + 1, p
        if best_gear:
            return best_gear
        if tables.kind == "ev" and f < 0.0:
            # service brakes extend the single gear below the regen envelope
            f_env = tables.f_min[0, i_e]
            if np.isfinite(f_env) and f >= f_env + params.brake_floor - 1e-9:
                return 1
        return 0
    if f < params.brake_floor - 1e-9:
        return 0
    f_a = tables.f_brk[:, i_e]
    if not np.any(np.isfinite(f_a)):
        return 0
    f_a_min = np.inf
    for g in range(tables.n_gears):
        if np.isfinite(f_a[g]) and f_a[g] < f_a_min:
            f_a_min = f_a[g]
    if f >= f_a_min:  # boundary joins the middle regime
        best_gear, best_val = 0, -np.inf
        for g in range(tables.n_gears):
            if np.isfinite(f_a[g]) and f_a[g] > best_val:
                best_gear, best_val = g + 1, f_a[g]
        return best_gear
    best_gear, best_val = 0, np.inf
    for g in range(tables.n_gears):
        if np.isfinite(f_a[g]) and f_a[g] < best_val:
            best_gear, best_val = g + 1, f_a[g]
    return best_gear


class TestSyntheticMaps:
    def test_cv_low_load_inefficiency(self, cv):
        act = cv.actuator
        eta_low = float(act.efficiency(act.omega_idle, 0.05 * act.torque[-1]))
        eta_high = float(act.efficiency(0.5 * act.omega_max, 0.9 * act.torque[-1]))
        assert eta_low < eta_high

    def test_ev_recuperation_sign(self, ev):
        act = ev.actuator
        p = float(act.power_at(0.6 * act.omega_max, -0.8 * act.gen["m_rated"]))
        assert p < 0.0

    def test_willans_consistency(self, cv):
        act = cv.actuator
        w = 0.5 * (act.omega_idle + act.omega_max)
        m1, m2 = 400.0, 1400.0
        dp = float(act.power_at(w, m2) - act.power_at(w, m1))
        assert dp == pytest.approx(act.gen["e1"] * w * (m2 - m1), rel=1e-9)

    def test_invalid_construction(self):
        with pytest.raises(ConstructionError):
            synth_actuator_map("cv", rated_power=-1.0, omega_idle=60, omega_max=220)
        with pytest.raises(ConstructionError):
            synth_actuator_map("cv", rated_power=1e5, omega_idle=220, omega_max=60)
        with pytest.raises(ConstructionError):
            synth_actuator_map("hybrid", rated_power=1e5, omega_idle=10, omega_max=220)


class TestWheelTransform:
    def test_single_gear_force_scaling(self):
        # R = 0.1 m and a 2000 Nm limit give 20 kN at the wheel
        params = VehicleParams(wheel_radius=0.5, final_gear_ratio=5.0,
                               transmission_ratios=(1.0,))
        act = synth_actuator_map("cv", rated_power=2000.0 * 130.0,
                                 omega_idle=50.0, omega_max=260.0)
        act_m_max = np.max(act.m_max)
        tables = wheel_transform(act, params, n_e=80, n_f=80)
        assert np.nanmax(tables.f_max) == pytest.approx(act_m_max / 0.1, rel=1e-9)

    def test_energy_window_hand_value(self):
        # omega_idle = 50 rad/s, R = 0.1 m, m = 40 t -> E_min = 500 kJ
        params = VehicleParams(wheel_radius=0.5, final_gear_ratio=5.0,
                               transmission_ratios=(1.0,))
        act = synth_actuator_map("cv", rated_power=3e5, omega_idle=50.0, omega_max=260.0)
        tables = wheel_transform(act, params)
        assert tables.e_ranges[0, 0] == pytest.approx(0.5 * 40000 * 5.0 ** 2, rel=1e-12)

    def test_gear_windows_increase_with_gear(self, cv):
        ranges = cv.tables.e_ranges
        assert np.all(np.diff(ranges[:, 0]) > 0)
        assert np.all(np.diff(ranges[:, 1]) > 0)


class TestGearMap:
    def test_single_gear_identity(self):
        params = VehicleParams(wheel_radius=0.5, final_gear_ratio=5.0,
                               transmission_ratios=(1.0,))
        act = synth_actuator_map("cv", rated_power=3e5, omega_idle=50.0, omega_max=260.0)
        gm = optimise_gear_map(wheel_transform(act, params, n_e=40, n_f=40), params)
        assert np.all(gm.gear[gm.feasible] == 1)

    def test_tie_breaks_to_lower_gear(self):
        # two artificial gears with identical wheel-level tables
        e_grid = np.linspace(1e5, 1e6, 5)
        f_grid = np.linspace(-1e3, 1e3, 5)
        p = np.ones((2, 5, 5)) * 1e4
        f_max = np.full((2, 5), 1e3)
        f_min = np.zeros((2, 5))
        f_brk = np.full((2, 5), -200.0)
        tables = WheelTables(kind="cv", e_grid=e_grid, f_grid=f_grid, power=p,
                             f_max=f_max, f_min=f_min, f_brk=f_brk,
                             e_ranges=np.array([[1e5, 1e6], [1e5, 1e6]]))
        gm = optimise_gear_map(tables, VehicleParams(transmission_ratios=(2.0, 1.0)))
        pos = f_grid >= 0
        assert np.all(gm.gear[:, pos] == 1)

    def test_matches_reference_enumerator_cv(self, cv):
        params = cv.params
        act = cv.actuator
        tables = wheel_transform(act, params, n_e=50, n_f=50)
        gm = optimise_gear_map(tables, params)
        for i in range(50):
            for k in range(50):
                expected = reference_gear_choice(tables, params, i, k)
                assert gm.gear[i, k] == expected, (i, k)

    def test_matches_reference_enumerator_ev(self, ev):
        tables = wheel_transform(ev.actuator, ev.params, n_e=50, n_f=50)
        gm = optimise_gear_map(tables, ev.params)
        for i in range(50):
            for k in range(50):
                assert gm.gear[i, k] == reference_gear_choice(tables, ev.params, i, k)
        assert set(np.unique(gm.gear)) <= {0, 1}

    def test_gear_map_optimality_invariant(self, cv):
        tables = wheel_transform(cv.actuator, cv.params, n_e=30, n_f=30)
        gm = optimise_gear_map(tables, cv.params)
        pos = tables.f_grid >= 0
        for i in range(30):
            for k in np.flatnonzero(pos):
                if not gm.feasible[i, k]:
                    continue
                chosen = gm.gear[i, k] - 1
                p_chosen = tables.power[chosen, i, k]
                for g in range(tables.n_gears):
                    p = tables.power[g, i, k]
                    if np.isfinite(p):
                        assert p_chosen <= p + 1e-9


class TestPowerFit:
    def test_recovers_basis_member(self):
        rng = np.random.default_rng(3)
        v = rng.uniform(5, 40, 300)
        F = rng.uniform(0, 2e4, 300)
        p_true = (2000.0, 0.8e-3, 2.1, 0.0)
        P = p_true[0] + p_true[1] * v ** 3 + p_true[2] * v * F
        fit = fit_power_poly(v, F, P, "cv")
        assert fit.p0 == pytest.approx(p_true[0], rel=1e-6)
        assert fit.p1 == pytest.approx(p_true[1], rel=1e-6)
        assert fit.p2 == pytest.approx(p_true[2], rel=1e-6)
        assert fit.max_rel_residual < 1e-9

    def test_recovers_ev_basis_member(self):
        rng = np.random.default_rng(4)
        v = rng.uniform(5, 40, 400)
        F = rng.uniform(-2e4, 2e4, 400)
        P = 1500.0 + 1e-3 * v ** 3 + 1.05 * v * F + 2e-6 * v * F ** 2
        fit = fit_power_poly(v, F, P, "ev")
        assert fit.p3 == pytest.approx(2e-6, rel=1e-6)

    def test_zero_force_samples_unidentifiable(self):
        v = np.linspace(5, 40, 50)
        with pytest.raises(FitError):
            fit_power_poly(v, np.zeros(50), 1000 + v ** 3, "cv")

    def test_nonnegative_coefficients(self, cv, ev):
        for fit in (cv.power_fit, ev.power_fit):
            assert min(fit.p0, fit.p1, fit.p2, fit.p3) >= 0.0

    def test_cv_residual_within_five_percent(self, cv):
        assert cv.power_fit.max_rel_residual <= 0.05


class TestForceLimitLp:
    def test_exact_reciprocal_form(self):
        v = np.linspace(5.0, 40.0, 120)
        c0, c1 = 800.0, 2.5e5
        rows = np.stack([np.ones_like(v), 1.0 / v], axis=1)
        A = np.vstack([rows, [0.0, -1.0]])
        b = np.concatenate([c0 + c1 / v, [0.0]])
        w = np.array([v[-1] - v[0], np.log(v[-1]) - np.log(v[0])])
        y = solve_lp_2var(w, A, b)
        assert y[0] == pytest.approx(c0, rel=1e-7)
        assert y[1] == pytest.approx(c1, rel=1e-7)

    def test_constant_limit_gives_flat_fit(self):
        v = np.linspace(5.0, 40.0, 100)
        rows = np.stack([np.ones_like(v), 1.0 / v], axis=1)
        A = np.vstack([rows, [0.0, -1.0]])
        b = np.concatenate([np.full_like(v, 9e4), [0.0]])
        w = np.array([v[-1] - v[0], np.log(v[-1]) - np.log(v[0])])
        y = solve_lp_2var(w, A, b)
        assert y[0] == pytest.approx(9e4, rel=1e-9)
        assert y[1] == pytest.approx(0.0, abs=1e-6)

    @given(st.integers(min_value=0, max_value=10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_matches_scipy_linprog(self, seed):
        rng = np.random.default_rng(seed)
        m = 40
        A = np.vstack([rng.normal(size=(m, 2)), [[0.0, -1.0]]])
        b = np.concatenate([rng.uniform(1.0, 5.0, m), [0.0]])
        c = rng.normal(size=2)
        res = linprog(-c, A_ub=A, b_ub=b, bounds=[(None, None)] * 2, method="highs")
        if not res.success:  # unbounded draws are skipped
            return
        x = solve_lp_2var(c, A, b)
        assert c @ x == pytest.approx(-res.fun, rel=1e-6, abs=1e-8)

    def test_inner_approximation_of_envelope(self, cv):
        fit = cv.force_fit
        gm = cv.gear_map
        v_grid = speed_of(gm.e_grid, cv.params)
        v_check = np.linspace(fit.v_floor, v_grid.max(), 400)
        envelope = np.interp(v_check, v_grid, gm.f_gamma_max)
        assert np.all(fit.f_max_v(v_check) <= envelope + 1e-9)
        assert fit.y1 >= 0.0

    def test_ev_min_limit_mirror(self, ev):
        fit = ev.force_fit
        gm = ev.gear_map
        v_grid = speed_of(gm.e_grid, ev.params)
        v_check = np.linspace(fit.v_floor, v_grid.max(), 400)
        env_min = np.interp(v_check, v_grid, gm.f_gamma_min)
        assert np.all(fit.f_min_v(v_check) >= env_min - 1e-9)
        assert fit.x1 <= 0.0


class TestSerialization:
    def test_gear_map_round_trip(self, cv, tmp_path):
        path = tmp_path / "gm.json"
        serialize.save_json(serialize.gear_map_to_doc(cv.gear_map), path)
        loaded = serialize.gear_map_from_doc(serialize.load_json(path))
        assert np.array_equal(loaded.e_grid, cv.gear_map.e_grid)
        assert np.array_equal(loaded.gear, cv.gear_map.gear)
        assert np.array_equal(loaded.feasible, cv.gear_map.feasible)
        assert np.array_equal(loaded.power, cv.gear_map.power, equal_nan=True)
        assert np.array_equal(loaded.f_gamma_max, cv.gear_map.f_gamma_max)

    def test_fit_round_trips_lossless(self, cv, tmp_path):
        p1 = tmp_path / "pf.json"
        serialize.save_json(serialize.power_fit_to_doc(cv.power_fit), p1)
        pf = serialize.power_fit_from_doc(serialize.load_json(p1))
        assert pf == cv.power_fit
        p2 = tmp_path / "ff.json"
        serialize.save_json(serialize.force_fit_to_doc(cv.force_fit), p2)
        ff = serialize.force_fit_from_doc(serialize.load_json(p2))
        assert ff == cv.force_fit

    def test_schema_rejections(self, cv):
        doc = serialize.power_fit_to_doc(cv.power_fit)
        bad = dict(doc, schema="something.else")
        with pytest.raises(ParseError):
            serialize.power_fit_from_doc(bad)
        bad = dict(doc, version=99)
        with pytest.raises(ParseError):
            serialize.power_fit_from_doc(bad)
        gm_doc = serialize.gear_map_to_doc(cv.gear_map)
        gm_doc = json.loads(json.dumps(gm_doc))
        gm_doc["gear"]["shape"] = [3, 3]
        with pytest.raises(ParseError):
            serialize.gear_map_from_doc(gm_doc)
