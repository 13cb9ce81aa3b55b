import csv
import math

import numpy as np
import pytest

from bsdemeasure import closedform as cf
from bsdemeasure import generators as gm
from bsdemeasure import iterate as it
from bsdemeasure.errors import ImportanceDegeneracyError, InvalidArgument
from bsdemeasure.paths import build_grid, simulate_ensemble


@pytest.fixture(scope="module")
def ens():
    return simulate_ensemble(build_grid(1.0, 20), 20_000, 31)


W1 = cf.EndpointFunctional(lambda w: w)


def test_zero_generator_single_sweep(ens):
    res = it.iterate_measure_solution(cf.EndpointFunctional(np.tanh), gm.LinearBounded(0.0, 0.0), ens)
    assert res.converged and res.state.n == 1
    assert res.state.Y0 == pytest.approx(np.mean(np.tanh(ens.values[:, -1])), abs=1e-12)


def test_constant_terminal(ens):
    res = it.iterate_measure_solution(cf.EndpointFunctional(lambda w: 0 * w + 2.0), gm.Quadratic(0.3), ens)
    assert res.converged and res.state.n == 1
    assert res.state.Y0 == pytest.approx(2.0)
    assert np.max(np.abs(res.solution.Z)) < 1e-9


def test_linear_generator_oracle(ens):
    res = it.iterate_measure_solution(W1, gm.LinearBounded(0.3, 0.3), ens)
    assert res.converged and res.state.n <= 5
    assert abs(res.state.Y0 - 0.3) <= 3 * res.state.Y0_se


def test_quadratic_with_linear_terminal(ens):
    # Z = 1 is a fixed point, so Y_0 = alpha
    res = it.iterate_measure_solution(W1, gm.Quadratic(0.25), ens)
    assert res.converged
    assert abs(res.state.Y0 - 0.25) <= 3 * res.state.Y0_se
    assert np.sqrt(np.mean((res.solution.Z[:, 1:-1] - 1.0) ** 2)) < 0.05
    assert res.report.verdict == "MeasureSolution"


def test_nonzero_generator_at_origin(ens):
    spec = gm.LipschitzCustom(lambda t, z: 1.0 + 0.3 * z, lambda t: 0.3, 1.3)
    res = it.iterate_measure_solution(W1, spec, ens)
    assert res.solution.Y[0, 0] == pytest.approx(1.3, abs=3 * res.state.Y0_se + 1e-9)
    np.testing.assert_allclose(res.solution.Y[:, -1], ens.values[:, -1], atol=1e-12)


def test_degeneracy_reports_trace(ens):
    sq = cf.EndpointFunctional(lambda w: w ** 3)
    with pytest.raises(ImportanceDegeneracyError) as info:
        it.iterate_measure_solution(sq, gm.Quadratic(3.0), ens, min_ess_fraction=0.5)
    assert len(info.value.trace) >= 1


def test_stall_rule():
    mk = lambda d: it.IterationState(0, None, [], [], 0.0, 0.0, d, d, 1.0, 1.0, 0.0)
    assert it._stalled([mk(x) for x in (1, 1, 2, 3, 4, 5)], 5)
    assert not it._stalled([mk(x) for x in (1, 1, 2, 3, 2, 5)], 5)
    assert not it._stalled([mk(x) for x in (1, 2)], 5)


def test_trace_and_monitors(ens, tmp_path):
    res = it.iterate_measure_solution(cf.EndpointFunctional(np.tanh), gm.Quadratic(0.25), ens)
    tr = it.convergence_trace(res.history)
    assert tr.ratio < 1
    p = tmp_path / "trace.csv"
    it.write_trace_csv(res.history, p)
    with open(p) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["n", "dist_L2", "ess", "Y0", "sup_weighted_Y", "weighted_Z_L2"]
    assert len(rows) == len(res.history)
    assert it.boundedness_monitor(res.history).bounded
    with pytest.raises(InvalidArgument):
        it.convergence_trace(res.history[:1])


def test_tightness_of_brownian_sample(ens):
    stat = it.tightness_statistic(ens)
    for v in stat.values():
        assert v == pytest.approx(3.0, rel=0.1)


def test_diagnostics_config_validation():
    with pytest.raises(InvalidArgument):
        it.DiagnosticsConfig(beta=0.0)
    with pytest.raises(InvalidArgument):
        it.DiagnosticsConfig(p=1.0)
