import gzip
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsdemeasure.errors import InvalidArgument
from bsdemeasure.paths import (Barrier, build_grid, detect_hitting, geometric_grid, rho, rho_inverse,
                               sample_first_passage, simulate_ensemble, time_change_solution,
                               write_paths_csv)
from bsdemeasure import closedform as cf


def test_grid_validation():
    with pytest.raises(InvalidArgument):
        build_grid(0.0, 10)
    with pytest.raises(InvalidArgument):
        build_grid(1.0, 0)
    g = geometric_grid(1.0, 1e-3, extra_nodes=(0.5,))
    assert g.nodes[0] == 0 and g.nodes[-1] == 1.0 and 0.5 in g.nodes and 1e-3 in g.nodes


def test_ensemble_is_seeded():
    g = build_grid(1.0, 10)
    a, b = simulate_ensemble(g, 5, 3), simulate_ensemble(g, 5, 3)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, simulate_ensemble(g, 5, 4).values)
    np.testing.assert_allclose(np.cumsum(a.increments, axis=1), a.values[:, 1:])


def test_coarsen_keeps_paths():
    e = simulate_ensemble(build_grid(1.0, 12), 4, 2)
    c = e.coarsen(3)
    np.testing.assert_array_equal(c.values, e.values[:, ::3])
    assert c.grid.n_steps == 4
    with pytest.raises(InvalidArgument):
        e.coarsen(5)


def test_linear_interpolation_without_bridge():
    times = np.array([0.0, 1.0, 2.0])
    # barrier W <= t - 1 is 0 at t=1, 1 at t=2; path 0.5 -> 0.5 crosses at t=1.5 linearly
    values = np.array([[0.0, 0.5, 0.5]])
    rec = detect_hitting(times, values, Barrier.rho_c(1.0), bridge_correction=False)
    assert rec.tau[0] == pytest.approx(1.5)


def test_bridge_hit_lies_inside_first_crossing_interval():
    e = simulate_ensemble(build_grid(4.0, 400), 2000, 5)
    bar = Barrier.tau_b(1.0)
    rec = detect_hitting(e.grid.nodes, e.values, bar, True, e.seed, e.path_ids)
    plain = detect_hitting(e.grid.nodes, e.values, bar, False)
    hit = ~np.isnan(plain.tau)
    # the bridge never reports a passage after the first node found below the line
    right = e.grid.nodes[np.ceil(plain.tau[hit] / 0.01 - 1e-9).astype(int)]
    assert np.all(rec.tau[hit] <= right + 1e-12)
    assert np.mean(np.isnan(rec.tau)) <= np.mean(np.isnan(plain.tau))


def test_hitting_probability_matches_reflection_principle():
    # P(inf_{t<=1} W_t <= -1) = 2 P(W_1 <= -1) for a flat barrier
    s = sample_first_passage(Barrier(0.0, -1.0), 50_000, 3, dt=0.05, horizon=1.0)
    p = np.mean(~np.isnan(s.tau[:, 0]))
    exact = math.erfc(1 / math.sqrt(2))
    assert abs(p - exact) < 4 * math.sqrt(exact * (1 - exact) / 50_000)


@given(st.floats(0, 1e6, allow_nan=False))
def test_rho_roundtrip(t):
    assert float(rho_inverse(rho(t))) == pytest.approx(t, rel=1e-9, abs=1e-12)


def test_rho_limits():
    assert rho(math.inf) == 1.0
    assert rho_inverse(1.0) == math.inf
    with pytest.raises(InvalidArgument):
        rho_inverse(1.5)


def test_paths_csv(tmp_path):
    e = simulate_ensemble(build_grid(1.0, 4), 3, 1)
    p = tmp_path / "paths.csv.gz"
    write_paths_csv(e, p)
    with gzip.open(p, "rt") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "path_id,t,W"
    assert len(lines) == 1 + 3 * 5
    pid, t, w = lines[7].split(",")
    assert float(w) == e.values[int(pid), round(float(t) / 0.25)]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_time_change_maps_into_unit_interval(seed):
    e = simulate_ensemble(build_grid(20.0, 200), 50, seed)
    sol = cf.first_solution(1.0, 3.0, e)
    keep = np.nonzero(~sol.truncated)[0]
    tc = time_change_solution(sol.subset(keep))
    assert tc.times[0] == 0 and tc.times[-1] == 1.0
    assert np.all((tc.tau > 0) & (tc.tau < 1))
    np.testing.assert_allclose(tc.Y[:, -1], sol.Y[keep, -1])
