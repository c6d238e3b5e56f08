import math

import numpy as np
import pytest

from gridlock import _backend, _kernels_py
from gridlock.fll import Estimator, FllGains
from gridlock.harness import RunConfig, run
from gridlock.signals import amplitude_sag_scenario, frequency_step_scenario, phase_jump_scenario

from conftest import K, W0

needs_compiled = pytest.mark.skipif("compiled" not in _backend.available(),
                                    reason="compiled kernel not built")


def _call(mod, code, u, out=None, k=K, d=K, state=(0.0, 0.0, W0, 0.0, 0.0)):
    out = np.zeros((len(u), len(_kernels_py.OUT_COLUMNS))) if out is None else out
    fail, final = mod.run(code, np.ascontiguousarray(u.real), np.ascontiguousarray(u.imag),
                          k, d, 1.0, 1e-4, state, True, out)
    return fail, final, out


@needs_compiled
@pytest.mark.parametrize("est", list(Estimator))
@pytest.mark.parametrize("scenario", [
    frequency_step_scenario(5.0), phase_jump_scenario(math.radians(20)), amplitude_sag_scenario(),
    frequency_step_scenario(-5.0, theta0=2.0),
])
@pytest.mark.parametrize("d_over_k", [0.25, 1.0, 2.0])
def test_backends_bit_identical(est, scenario, d_over_k):
    cfg = RunConfig(est, FllGains(K, d_over_k * K, theta0_hat=0.4), scenario)
    a = run(cfg, "compiled")
    b = run(cfg, "python")
    assert a.backend == "compiled" and b.backend == "python"
    assert np.array_equal(a.outputs, b.outputs)


@needs_compiled
def test_backends_return_same_final_state():
    u = np.exp(1j * (2 * math.pi * 61 * 1e-4 * np.arange(800) + 0.3))
    for code in (0, 1, 2):
        _, fa, _ = _call(_backend.get("compiled"), code, u)
        _, fb, _ = _call(_backend.get("python"), code, u)
        assert fa == fb


@pytest.mark.parametrize("code", [0, 1, 2])
def test_divergence_reports_first_bad_sample(code, backend):
    u = np.ones(300, dtype=complex)
    u[123] = complex(math.nan, 0.0)
    fail, _, out = _call(_backend.get(backend), code, u)
    assert fail == 123
    assert np.all(np.isfinite(out[:123]))


def test_compiled_rejects_short_buffer():
    if "compiled" not in _backend.available():
        pytest.skip("compiled kernel not built")
    with pytest.raises(ValueError):
        _call(_backend.get("compiled"), 2, np.ones(10, dtype=complex), out=np.zeros((5, 14)))


def test_backend_selection(monkeypatch):
    assert _backend.get("python") is _kernels_py
    monkeypatch.setenv("GRIDLOCK_BACKEND", "python")
    assert _backend.get() is _kernels_py
    assert _backend.name_of(_backend.get()) == "python"
    monkeypatch.setenv("GRIDLOCK_BACKEND", "auto")
    expected = "compiled" if "compiled" in _backend.available() else "python"
    assert _backend.name_of(_backend.get()) == expected
    with pytest.raises(ValueError):
        _backend.get("fortran")


def test_missing_extension_falls_back(monkeypatch):
    monkeypatch.setattr(_backend, "_compiled", None)
    monkeypatch.delenv("GRIDLOCK_BACKEND", raising=False)
    assert _backend.available() == ("python",)
    assert _backend.get() is _kernels_py
    with pytest.raises(ImportError):
        _backend.get("compiled")


def test_harness_honours_environment(monkeypatch):
    monkeypatch.setenv("GRIDLOCK_BACKEND", "python")
    tr = run(RunConfig(Estimator.SRF_FLL, FllGains(), frequency_step_scenario(1.0, duration=0.3)))
    assert tr.backend == "python"
