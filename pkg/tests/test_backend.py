import numpy as np
import pytest

from bsdemeasure import _backend
from bsdemeasure.paths import build_grid, simulate_ensemble

compiled = pytest.mark.skipif("compiled" not in _backend.available(), reason="extension not built")


@compiled
def test_normals_identical_across_backends():
    a = _backend.normal_block(3, 10, 50, 5, 40, 0, backend="compiled")
    b = _backend.normal_block(3, 10, 50, 5, 40, 0, backend="python")
    # same integer stream; libm and numpy transcendentals may differ in the last bit
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


@compiled
def test_uniforms_identical_across_backends():
    a = _backend.uniform_block(9, 0, 20, 0, 30, 4, backend="compiled")
    b = _backend.uniform_block(9, 0, 20, 0, 30, 4, backend="python")
    np.testing.assert_array_equal(a, b)
    assert np.all((a > 0) & (a < 1))


@compiled
@pytest.mark.parametrize("bridge", [True, False])
def test_first_passage_identical_across_backends(bridge):
    args = (5, 0, 300, 1e-2, 2000, 1.0, np.array([-0.5, -1.0]), np.array([0.0, 0.3]), bridge, [10, 50])
    a = _backend.first_passage(*args, backend="compiled")
    b = _backend.first_passage(*args, backend="python")
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12, equal_nan=True)


def test_paths_do_not_depend_on_chunking_or_threads():
    grid = build_grid(1.0, 20)
    whole = simulate_ensemble(grid, 40, 11, n_threads=1)
    tail = simulate_ensemble(grid, 15, 11, n_threads=2, path_start=25)
    np.testing.assert_array_equal(whole.values[25:], tail.values)


def test_normals_have_unit_variance():
    z = _backend.normal_block(1, 0, 2000, 0, 50)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.01


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        _backend.normal_block(1, 0, 2, 0, 2, backend="gpu")


def test_environment_forces_fallback():
    import os
    import subprocess
    import sys
    env = dict(os.environ, BSDEMEASURE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import bsdemeasure; print(bsdemeasure.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
