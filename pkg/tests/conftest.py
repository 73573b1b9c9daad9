import numpy as np
import pytest

from deepens.nn import backward

ACCEPTANCE_LINES = []


def finite_diff_grads(params, x, y, loss, masks=None, h=1e-5):
    """Central differences of the mean loss w.r.t. every parameter and every input entry."""
    def f(p, xx):
        return backward(p, xx, y, loss, masks=masks)[0]

    arrays = [a.copy() for a in params.arrays()]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for i in np.ndindex(a.shape):
            old = a[i]
            a[i] = old + h
            up = f(params.with_arrays(arrays), x)
            a[i] = old - h
            down = f(params.with_arrays(arrays), x)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    x = np.array(x, dtype=np.float64)
    gx = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        gx[i] = (f(params, xp) - f(params, xm)) / (2 * h)
    return grads, gx


def max_rel_error(a, b, floor=1e-6):
    """Largest entrywise |a-b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def acceptance():
    def record(number, name, passed, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} {detail}".rstrip())
        assert passed, f"criterion {number} ({name}) failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
