"""Shared helpers for the test suite."""

import numpy as np

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Queue a per-criterion pass/fail line for the terminal summary."""
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def finite_diff_check(value_and_grad, x0, eps=1e-6, rel_tol=1e-4, n_probe=None, rng=None):
    """Compare an analytic gradient against central finite differences.

    `value_and_grad(x)` returns (scalar loss, gradient array like x).
    Checks either every coordinate or `n_probe` random ones. Returns the
    maximum relative error seen.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _, grad = value_and_grad(x0)
    grad = np.asarray(grad, dtype=np.float64)
    assert grad.shape == x0.shape
    flat = x0.ravel()
    if n_probe is None or n_probe >= flat.size:
        coords = np.arange(flat.size)
    else:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(flat.size, size=n_probe, replace=False)
    max_rel = 0.0
    for c in coords:
        xp = flat.copy()
        xm = flat.copy()
        xp[c] += eps
        xm[c] -= eps
        lp, _ = value_and_grad(xp.reshape(x0.shape))
        lm, _ = value_and_grad(xm.reshape(x0.shape))
        num = (lp - lm) / (2 * eps)
        ana = grad.ravel()[c]
        if abs(num) < 1e-7 and abs(ana) < 1e-7:
            continue  # both effectively zero; the quotient is pure FD noise
        denom = max(abs(num), abs(ana), 1e-8)
        rel = abs(num - ana) / denom
        max_rel = max(max_rel, rel)
        assert rel < rel_tol, f"coord {c}: analytic {ana} vs numeric {num} (rel {rel:.2e})"
    return max_rel
