"""Release criteria, one pass/fail line each (run with ``-s`` to see them)."""

import time

import pytest

from gridlock import _backend, validation


@pytest.mark.parametrize("backend", _backend.available())
@pytest.mark.parametrize("name", list(validation.CRITERIA))
def test_criterion(name, backend):
    t0 = time.perf_counter()
    r = validation.evaluate(name, backend)
    print(f"\n{r.line()}  [{backend}, {time.perf_counter() - t0:.2f} s]")
    assert r.passed, r.detail


def test_full_suite_runtime():
    if "compiled" not in _backend.available():
        pytest.skip("runtime budget applies to the compiled kernel")
    t0 = time.perf_counter()
    results = validation.run_all(backend="compiled")
    elapsed = time.perf_counter() - t0
    print(f"\n{sum(r.passed for r in results)}/{len(results)} criteria in {elapsed:.2f} s")
    assert elapsed < 10.0
