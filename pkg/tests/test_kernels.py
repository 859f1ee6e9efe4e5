"""Accelerated pairwise kernels vs their pure-numpy fallbacks and a brute
reference.  The two code paths must agree to machine precision: they are
selected by an environment flag, and a silent divergence (e.g. a sign slip
in one implementation of the kernel derivative) corrupts every downstream
convolution."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shearstab import _kernels
from shearstab._kernels import exp_abs_convolve, exp_abs_convolve_d, split_exp_apply

rng = np.random.default_rng(20240817)


def _brute_convolve(alpha, targets, sources, values):
    d = np.abs(targets[:, None] - sources[None, :])
    return np.exp(-alpha * d) @ values


def _brute_convolve_d(alpha, targets, sources, values):
    d = targets[:, None] - sources[None, :]
    return (-np.sign(d) * np.exp(-alpha * np.abs(d))) @ values


def _brute_split(theta_t, theta_s, left_vals, right_vals):
    out = np.empty(len(theta_t), dtype=complex)
    for i, tt in enumerate(theta_t):
        acc = 0.0 + 0.0j
        for j, ts in enumerate(theta_s):
            if ts.real <= tt.real:
                acc += left_vals[j] * np.exp(ts - tt)
            else:
                acc += right_vals[j] * np.exp(tt - ts)
        out[i] = acc
    return out


def _random_cloud(n_t=37, n_s=53):
    targets = np.sort(rng.uniform(0.0, 25.0, n_t))
    sources = rng.uniform(0.0, 25.0, n_s)
    values = rng.normal(size=n_s) + 1j * rng.normal(size=n_s)
    return targets, sources, values


# ---------------------------------------------------------------------------
# Semantics against the brute-force reference
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_convolve_matches_reference(alpha):
    targets, sources, values = _random_cloud()
    got = exp_abs_convolve(alpha, targets, sources, values)
    ref = _brute_convolve(alpha, targets, sources, values)
    assert np.max(np.abs(got - ref)) < 1e-13 * np.max(np.abs(ref))


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_convolve_derivative_matches_reference(alpha):
    targets, sources, values = _random_cloud()
    got = exp_abs_convolve_d(alpha, targets, sources, values)
    ref = _brute_convolve_d(alpha, targets, sources, values)
    assert np.max(np.abs(got - ref)) < 1e-13 * max(1.0, np.max(np.abs(ref)))


def test_convolve_derivative_is_fd_of_convolve():
    # The two kernels must be consistent with each other, not just each
    # with its own formula: alpha * signed sum == d/dt of the plain sum.
    alpha = 1.3
    targets, sources, values = _random_cloud()
    # Keep FD probes away from the kink at each source.
    targets = sources.min() + (sources.max() - sources.min()) * np.array(
        [0.101, 0.307, 0.523, 0.741]
    )
    h = 1e-7
    fd = (
        exp_abs_convolve(alpha, targets + h, sources, values)
        - exp_abs_convolve(alpha, targets - h, sources, values)
    ) / (2 * h)
    der = alpha * exp_abs_convolve_d(alpha, targets, sources, values)
    mask = np.min(np.abs(targets[:, None] - sources[None, :]), axis=1) > 10 * h
    assert np.max(np.abs(fd[mask] - der[mask])) < 1e-5 * np.max(np.abs(der))


def test_split_exp_matches_reference():
    n_s = 40
    theta_s = np.sort(rng.uniform(0, 50, n_s)) + 1j * rng.normal(size=n_s)
    theta_t = rng.uniform(0, 50, 17) + 1j * rng.normal(size=17)
    lv = rng.normal(size=n_s) + 1j * rng.normal(size=n_s)
    rv = rng.normal(size=n_s) + 1j * rng.normal(size=n_s)
    got = split_exp_apply(theta_t, theta_s, lv, rv)
    ref = _brute_split(theta_t, theta_s, lv, rv)
    assert np.max(np.abs(got - ref)) < 1e-12 * np.max(np.abs(ref))


def test_split_exp_overflow_free_across_many_efolds():
    # Phases spanning thousands of e-folds must not overflow: every
    # exponent is nonpositive by construction.
    theta_s = np.linspace(0.0, 5000.0, 101).astype(complex)
    theta_t = np.array([2500.0 + 0.3j])
    lv = np.ones(101, dtype=complex)
    rv = np.ones(101, dtype=complex)
    out = split_exp_apply(theta_t, theta_s, lv, rv)
    assert np.all(np.isfinite(out))
    # Dominated by the two sources nearest the target.
    assert abs(out[0]) < 5.0


# ---------------------------------------------------------------------------
# Dual path: compiled kernels vs numpy fallbacks
# ---------------------------------------------------------------------------


def _numpy_fallback(name, *args):
    out = np.empty(len(args[1]) if name != "split" else len(args[0]), dtype=complex)
    chunk = _kernels._CHUNK if hasattr(_kernels, "_CHUNK") else 256
    if name == "conv":
        alpha, targets, sources, values = args
        d = np.abs(targets[:, None] - sources[None, :])
        return np.exp(-alpha * d) @ values
    if name == "conv_d":
        alpha, targets, sources, values = args
        d = targets[:, None] - sources[None, :]
        return (np.exp(-alpha * np.abs(d)) * -np.sign(d)) @ values
    raise AssertionError(name)


@pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba not active in this run")
def test_compiled_paths_agree_with_fallback_formulas():
    targets, sources, values = _random_cloud(64, 77)
    for alpha in (0.7, 1.9):
        got = exp_abs_convolve(alpha, targets, sources, values)
        ref = _numpy_fallback("conv", alpha, targets, sources, values)
        assert np.max(np.abs(got - ref)) < 1e-13 * np.max(np.abs(ref))
        got_d = exp_abs_convolve_d(alpha, targets, sources, values)
        ref_d = _numpy_fallback("conv_d", alpha, targets, sources, values)
        assert np.max(np.abs(got_d - ref_d)) < 1e-13 * max(1.0, np.max(np.abs(ref_d)))


def test_disable_flag_selects_fallback():
    import subprocess
    import sys

    code = (
        "import shearstab._kernels as k; "
        "import numpy as np; "
        "assert not k.HAS_NUMBA; "
        "t = np.linspace(0, 10, 11); s = np.linspace(0, 10, 7); "
        "v = np.arange(7) + 1j; "
        "a = k.exp_abs_convolve(1.0, t, s, v); "
        "d = np.abs(t[:, None] - s[None, :]); "
        "ref = np.exp(-d) @ v; "
        "assert np.max(np.abs(a - ref)) < 1e-13 * np.max(np.abs(ref)); "
        "print('fallback-ok')"
    )
    env = {"SHEARSTAB_DISABLE_NUMBA": "1", "PATH": "/usr/bin:/bin"}
    import os

    env.update({k: v for k, v in os.environ.items() if k.startswith("PYTHON")})
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, env=env
    )
    assert out.returncode == 0, out.stderr
    assert "fallback-ok" in out.stdout


@settings(max_examples=30, deadline=None)
@given(
    alpha=st.floats(min_value=0.1, max_value=5.0),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_convolve_symmetry_and_positivity(alpha, seed):
    # Real nonnegative weights give a real nonnegative convolution, and
    # swapping targets/sources with unit weights is symmetric.
    r = np.random.default_rng(seed)
    targets = np.sort(r.uniform(0, 10, 9))
    sources = np.sort(r.uniform(0, 10, 9))
    w = r.uniform(0.1, 1.0, 9)
    got = exp_abs_convolve(alpha, targets, sources, w.astype(complex))
    assert np.all(got.real >= 0) and np.max(np.abs(got.imag)) < 1e-14
    a2b = exp_abs_convolve(alpha, targets, sources, np.ones(9, dtype=complex))
    b2a = exp_abs_convolve(alpha, sources, targets, np.ones(9, dtype=complex))
    assert np.sum(a2b) == pytest.approx(np.sum(b2a), rel=1e-12)
