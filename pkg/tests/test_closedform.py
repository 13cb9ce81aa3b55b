import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsdemeasure import closedform as cf
from bsdemeasure import verify as vf
from bsdemeasure.errors import DomainError, InvalidArgument
from bsdemeasure.generators import Quadratic
from bsdemeasure.paths import build_grid, simulate_ensemble
from bsdemeasure.regression import QuadratureEngine

pos = st.floats(0.05, 5.0)


@given(pos, st.floats(0.0, 10.0), st.floats(0.1, 3.0))
def test_laplace_formula(b, lam, level):
    assert cf.laplace_tau(b, lam, level) == pytest.approx(math.exp(level * (b - math.sqrt(b * b + 2 * lam))))


def test_laplace_domain():
    with pytest.raises(DomainError):
        cf.laplace_tau(1.0, -0.6)
    assert cf.laplace_tau(1.0, -0.5) == pytest.approx(math.e)


@given(st.floats(-5, 5), pos, st.floats(0.1, 3.0))
def test_measure_value_is_a_laplace_transform(g, b, level):
    # E exp(g W_tau - g^2 tau/2) = exp(-g level) E exp((g b - g^2/2) tau)
    lam = 0.5 * g * g - g * b
    via = math.exp(-g * level) * cf.laplace_tau(b, lam, level)
    assert cf.constant_drift_measure_value(g, b, level) == pytest.approx(via, rel=1e-9)


@given(pos, pos)
def test_scenarios(a, b):
    rep = cf.scenario_report(a, b)
    if b >= 2 * a:
        assert (rep.scenario, rep.n_solutions, rep.measure_flags) == ("A", 1, [True])
    elif b >= a:
        assert (rep.scenario, rep.measure_flags) == ("B", [True, True])
    else:
        assert (rep.scenario, rep.measure_flags) == ("C", [False, True])


def test_invalid_parameters():
    with pytest.raises(InvalidArgument):
        cf.classify_scenario(0.0, 1.0)
    with pytest.raises(InvalidArgument):
        cf.mixed_measure_values(0.5, 1.5)


def test_mixed_values():
    assert cf.mixed_measure_values(0.5, 0.3) == (1.0, 1.0)
    s1, s2 = cf.mixed_measure_values(2.0, 0.25)
    assert s1 == pytest.approx(math.exp(-0.5)) and s2 == 1.0


def test_continuum_terminal():
    t = cf.HittingAffine.continuum(0.3, 0.7)
    assert t.of_tau(2.0) == pytest.approx(2 * 0.3 * 0.7 * 2.0 + 0.7)


@pytest.fixture(scope="module")
def ens():
    return simulate_ensemble(build_grid(5.0, 500), 3000, 17)


def test_first_solution_exact_residual(ens):
    sol = cf.first_solution(1.0, 1.5, ens)
    res = vf.bsde_residual(sol, Quadratic(0.5))
    assert res.max_abs < 1e-12


def test_second_solution_values(ens):
    sol = cf.second_solution(1.0, 0.5, ens)
    keep = ~sol.truncated
    assert sol.Y[0, 0] == pytest.approx(2 * 0.5 - 4 * 1.0)
    np.testing.assert_allclose(sol.Y[keep, -1], sol.xi[keep], atol=1e-12)
    np.testing.assert_allclose(sol.relative_Y()[:, 0], 0.0)


def test_zero_a_first_solution(ens):
    sol = cf.first_solution(0.0, 1.0, ens)
    assert np.all(sol.Y == 0) and np.all(sol.Z == 0)


def test_ito_identity_on_affine_solution(ens):
    rep = vf.ito_identity_check(cf.first_solution(1.0, 3.0, ens), 0.5)
    assert rep.max_deviation < 1e-10


def test_mixed_solution_start_value(ens):
    sol = cf.mixed_solution(0.5, 0.5, 0.2, ens)
    assert sol.Y[0, 0] == pytest.approx(0.2 + 2 * 0.5 * 0.5 + 2 * 0.5 * 0.5)
    keep = ~sol.truncated
    np.testing.assert_allclose(sol.Y[keep, -1], sol.xi[keep], atol=1e-12)


def test_square_endpoint_start_and_end():
    e = simulate_ensemble(build_grid(1.0, 100), 500, 3)
    sol = cf.square_endpoint_solution(1, e)
    assert sol.Y[0, 0] == pytest.approx(0.5 * math.log(2.0))
    np.testing.assert_allclose(sol.Y[:, -1], e.values[:, -1] ** 2 / 4)
    inf = cf.square_endpoint_solution(math.inf, e)
    assert inf.undefined_at_origin and np.isnan(inf.Y[0, 0])


def test_quadrature_matches_square_closed_form():
    e = simulate_ensemble(build_grid(1.0, 20), 200, 4)
    exact = cf.square_endpoint_solution(1, e)
    quad = cf.explicit_log_solution(0.5, cf.SquareEndpoint(1), e, engine=QuadratureEngine())
    np.testing.assert_allclose(quad.Y[:, :-1], exact.Y[:, :-1], atol=1e-10)
    np.testing.assert_allclose(quad.Z[:, :-1], exact.Z[:, :-1], atol=1e-8)


def test_regression_close_to_quadrature():
    e = simulate_ensemble(build_grid(1.0, 20), 20_000, 6)
    term = cf.EndpointFunctional(np.tanh)
    quad = cf.explicit_log_solution(0.25, term, e, engine=QuadratureEngine())
    reg = cf.explicit_log_solution(0.25, term, e, endpoint_feature=True)
    assert np.sqrt(np.mean((quad.Y - reg.Y) ** 2)) < 0.02


def test_moment_check_flags_heavy_tail():
    w = np.random.default_rng(0).standard_normal(100_000)
    heavy = cf.exponential_moment_check(w * w / 2)   # E exp(W^2/2) = inf
    light = cf.exponential_moment_check(w * w / 4)   # finite
    assert not heavy.stable and light.stable


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_solution_csv_roundtrip(tmp_path_factory, seed):
    e = simulate_ensemble(build_grid(1.0, 3), 2, seed)
    sol = cf.square_endpoint_solution(1, e)
    p = tmp_path_factory.mktemp("csv") / "sol.csv"
    cf.write_solution_csv(sol, p)
    rows = p.read_text().splitlines()
    assert rows[0] == "path_id,t,Y,Z" and len(rows) == 1 + 2 * 4
    assert float(rows[1].split(",")[2]) == sol.Y[0, 0]
