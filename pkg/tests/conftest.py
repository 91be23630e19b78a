"""Shared numerical oracles for the test suite."""

import numpy as np
import pytest

FD_DELTA = 1e-3
FD_RTOL = 1e-3


def finite_diff_grad(f, x, delta=FD_DELTA):
    """Central-difference gradient of scalar f w.r.t. every entry of x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + delta
        hi = f()
        flat[i] = orig - delta
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * delta)
    return g


def finite_diff_grad_at(f, x, coords, delta=FD_DELTA):
    """Central differences at selected flat coordinates only."""
    flat = x.reshape(-1)
    out = np.zeros(len(coords))
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + delta
        hi = f()
        flat[i] = orig - delta
        lo = f()
        flat[i] = orig
        out[k] = (hi - lo) / (2.0 * delta)
    return out


def rel_error(a, b):
    """Norm-relative disagreement between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def check_grad(analytic, f, x, delta=FD_DELTA, rtol=FD_RTOL):
    numeric = finite_diff_grad(f, x, delta)
    err = rel_error(analytic, numeric)
    assert err <= rtol, f"gradient mismatch: relative error {err:.2e}"


@pytest.fixture
def rng():
    return np.random.default_rng(np.random.SeedSequence(1234))


ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail=""):
    """One pass/fail line per acceptance criterion, echoed in the
    terminal summary so it survives output capture."""
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] {name}: {detail}" if detail else f"[{status}] {name}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
