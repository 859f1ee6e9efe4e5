"""Hot numerical kernels with optional numba acceleration.

Two pairwise kernels dominate the runtime of the convolution-type
operators in this package:

* ``exp_abs_convolve`` -- sums ``w[j] * exp(-alpha*|t[i] - x[j]|)`` over
  sources ``x`` for every target ``t`` (the ``e^{-alpha|y-x|}`` kernel of
  the second-order resolvent).
* ``split_exp_apply`` -- the generalisation where the exponent is an
  arbitrary complex phase ``theta`` with nondecreasing real part: sources
  left of a target contribute ``exp(theta_s - theta_t)`` and sources right
  of it ``exp(theta_t - theta_s)``, so every exponent has nonpositive real
  part and the sums are overflow-free even when ``theta`` itself spans
  thousands of e-folds.

Both have a pure-numpy fallback.  Set the environment variable
``SHEARSTAB_DISABLE_NUMBA=1`` to force the fallback (used by the benchmark
and the CI matrix); otherwise numba is used when importable.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("SHEARSTAB_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

try:
    if _DISABLE:
        raise ImportError("numba disabled by SHEARSTAB_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        """Fallback decorator: return the function unchanged."""

        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


# ---------------------------------------------------------------------------
# Implementations (plain Python; compiled below when numba is available)
# ---------------------------------------------------------------------------


def _exp_abs_convolve_impl(alpha, targets, sources, values, out):
    n_t = targets.shape[0]
    n_s = sources.shape[0]
    for i in range(n_t):
        t = targets[i]
        acc = 0.0 + 0.0j
        for j in range(n_s):
            acc += values[j] * np.exp(-alpha * abs(t - sources[j]))
        out[i] = acc
    return out


def _exp_abs_convolve_signed_impl(alpha, targets, sources, values, out):
    """Like ``_exp_abs_convolve_impl`` but weights each term by
    ``-sign(t - x)`` (the y-derivative of the kernel, without the -alpha
    factor which the caller applies)."""
    n_t = targets.shape[0]
    n_s = sources.shape[0]
    for i in range(n_t):
        t = targets[i]
        acc = 0.0 + 0.0j
        for j in range(n_s):
            d = t - sources[j]
            if d >= 0.0:
                acc -= values[j] * np.exp(-alpha * d)
            else:
                acc += values[j] * np.exp(alpha * d)
        out[i] = acc
    return out


def _split_exp_apply_impl(theta_t, theta_s, left_vals, right_vals, out):
    """out[i] = sum_{s: Re theta_s <= Re theta_t[i]} left_vals[s]*exp(theta_s - theta_t[i])
               + sum_{s: Re theta_s >  Re theta_t[i]} right_vals[s]*exp(theta_t[i] - theta_s)

    ``theta_s`` must be sorted by real part (nondecreasing); ``theta_t``
    need not be sorted.  All exponents then have nonpositive real part.
    """
    n_t = theta_t.shape[0]
    n_s = theta_s.shape[0]
    for i in range(n_t):
        tt = theta_t[i]
        re_t = tt.real
        acc = 0.0 + 0.0j
        for j in range(n_s):
            ts = theta_s[j]
            if ts.real <= re_t:
                acc += left_vals[j] * np.exp(ts - tt)
            else:
                acc += right_vals[j] * np.exp(tt - ts)
        out[i] = acc
    return out


if HAS_NUMBA:
    _exp_abs_convolve = njit(cache=True)(_exp_abs_convolve_impl)
    _exp_abs_convolve_signed = njit(cache=True)(_exp_abs_convolve_signed_impl)
    _split_exp_apply = njit(cache=True)(_split_exp_apply_impl)
else:
    # Vectorised numpy fallbacks (chunked to bound the memory of the
    # broadcasted pairwise matrices).
    _CHUNK = 256

    def _exp_abs_convolve(alpha, targets, sources, values, out):
        for lo in range(0, targets.shape[0], _CHUNK):
            hi = min(lo + _CHUNK, targets.shape[0])
            d = np.abs(targets[lo:hi, None] - sources[None, :])
            out[lo:hi] = np.exp(-alpha * d) @ values
        return out

    def _exp_abs_convolve_signed(alpha, targets, sources, values, out):
        for lo in range(0, targets.shape[0], _CHUNK):
            hi = min(lo + _CHUNK, targets.shape[0])
            d = targets[lo:hi, None] - sources[None, :]
            out[lo:hi] = (np.exp(-alpha * np.abs(d)) * -np.sign(d)) @ values
        return out

    def _split_exp_apply(theta_t, theta_s, left_vals, right_vals, out):
        re_s = theta_s.real
        for lo in range(0, theta_t.shape[0], _CHUNK):
            hi = min(lo + _CHUNK, theta_t.shape[0])
            tt = theta_t[lo:hi, None]
            left = re_s[None, :] <= tt.real
            expo = np.where(left, theta_s[None, :] - tt, tt - theta_s[None, :])
            vals = np.where(left, left_vals[None, :], right_vals[None, :])
            out[lo:hi] = np.einsum("ij,ij->i", np.exp(expo), vals)
        return out


# ---------------------------------------------------------------------------
# Public wrappers
# ---------------------------------------------------------------------------


def exp_abs_convolve(alpha, targets, sources, values):
    """Return ``sum_j values[j] * exp(-alpha*|targets[i] - sources[j]|)``.

    Parameters
    ----------
    alpha : float
        Positive decay rate of the kernel.
    targets, sources : real ndarray
        Evaluation points and quadrature points.
    values : complex ndarray
        Quadrature weights already multiplied into the integrand samples.
    """
    out = np.empty(len(targets), dtype=np.complex128)
    return _exp_abs_convolve(
        float(alpha),
        np.ascontiguousarray(targets, dtype=np.float64),
        np.ascontiguousarray(sources, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.complex128),
        out,
    )


def exp_abs_convolve_d(alpha, targets, sources, values):
    """y-derivative variant: ``sum_j values[j] * (-sign(t-x)) * exp(-alpha|t-x|)``.

    The caller multiplies by ``alpha`` to complete
    ``d/dt exp(-alpha|t-x|) = -alpha*sign(t-x)*exp(-alpha|t-x|)``.
    """
    out = np.empty(len(targets), dtype=np.complex128)
    return _exp_abs_convolve_signed(
        float(alpha),
        np.ascontiguousarray(targets, dtype=np.float64),
        np.ascontiguousarray(sources, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.complex128),
        out,
    )


def split_exp_apply(theta_t, theta_s, left_vals, right_vals):
    """Two-sided exponential pairing with complex phases (see module doc)."""
    out = np.empty(len(theta_t), dtype=np.complex128)
    return _split_exp_apply(
        np.ascontiguousarray(theta_t, dtype=np.complex128),
        np.ascontiguousarray(theta_s, dtype=np.complex128),
        np.ascontiguousarray(left_vals, dtype=np.complex128),
        np.ascontiguousarray(right_vals, dtype=np.complex128),
        out,
    )

# ---------------------------------------------------------------------------
# Compound-matrix minors for the fourth-order viscous operators
# ---------------------------------------------------------------------------
#
# The exact viscous boundary determinant is computed by integrating the
# six 2x2 minors of the two admissible (decaying) solutions of the
# fourth-order companion system from y_max down to the wall.  The minor
# vector obeys a linear 6x6 system whose coefficients involve only U, U',
# U'' and the local fast exponent; subtracting the drift Re(alpha + mu(y))
# keeps the components O(1) over the whole slab.  At nu = 1e-6 the
# integrator takes ~1e4-1e5 accepted steps per evaluation, so the step
# loop is the hot path: for the closed-form profile families it runs as a
# compiled kernel, any other profile (or SHEARSTAB_DISABLE_NUMBA=1) takes
# the identical plain-Python code path.
#
# The Runge-Kutta tableau is the Dormand-Prince 8(5,3) pair; the
# coefficient arrays are taken from scipy so both routes step with the
# same scheme as the generic integrator in ``odecore``.

PROFILE_CODES = {"cubic_exp": 0, "tanh_cubed": 1}

_DP_TABLES = None


def _dp853_tables():
    global _DP_TABLES
    if _DP_TABLES is None:
        from scipy.integrate._ivp import dop853_coefficients as dp

        _DP_TABLES = (
            np.ascontiguousarray(dp.A[:12, :12], dtype=np.float64),
            np.ascontiguousarray(dp.B, dtype=np.float64),
            np.ascontiguousarray(dp.C[:12], dtype=np.float64),
            np.ascontiguousarray(dp.E3, dtype=np.float64),
            np.ascontiguousarray(dp.E5, dtype=np.float64),
        )
    return _DP_TABLES


def _compound_rhs_impl(code, prm, alpha, cc, cc_gauge, nu, adjoint, y, w, out):
    """Drift-compensated minor system at height ``y`` (cc pre-conjugated).

    The decaying-pair minors grow like ``e^{+(alpha+Re mu)(y_max-y)}``
    toward the wall, so the integrated variable is
    ``v = w * exp(int_0^y (alpha + Re mu))`` and the system gains ``+d I``.
    The drift exponent is evaluated at ``cc_gauge`` (usually = ``cc``):
    freezing it at a reference phase speed keeps the resulting boundary
    value holomorphic in ``c``, which a complex Newton iteration needs.
    """
    if code == 0:
        # u_inf * (1 - e^{-y})^3
        e = np.exp(-y)
        u = prm[0] * (1.0 - 3.0 * e + 3.0 * e * e - e * e * e)
        u1 = prm[0] * (3.0 * e - 6.0 * e * e + 3.0 * e * e * e)
        u2 = prm[0] * (-3.0 * e + 12.0 * e * e - 9.0 * e * e * e)
    else:
        # u_inf * tanh(y)^3
        t = np.tanh(y)
        sech2 = 1.0 - t * t
        u = prm[0] * t * t * t
        u1 = prm[0] * 3.0 * t * t * sech2
        u2 = prm[0] * (6.0 * t - 12.0 * t * t * t) * sech2
    g = u - cc
    ia_nu = 1j * alpha / nu
    a2sq = alpha * alpha
    gg = u - cc_gauge
    if adjoint:
        a0 = ia_nu * g * a2sq - a2sq * a2sq
        a1 = -2.0 * ia_nu * u1
        a2 = -ia_nu * g + 2.0 * a2sq
        bigw = a2sq * nu - 1j * alpha * gg
    else:
        a0 = -ia_nu * (g * a2sq + u2) - a2sq * a2sq
        a1 = 0.0 + 0.0j
        a2 = ia_nu * g + 2.0 * a2sq
        bigw = a2sq * nu + 1j * alpha * gg
    mu = np.sqrt(bigw / nu)
    d = alpha + mu.real
    out[0] = w[1] + d * w[0]
    out[1] = w[2] + w[3] + d * w[1]
    out[2] = a1 * w[0] + a2 * w[1] + w[4] + d * w[2]
    out[3] = w[4] + d * w[3]
    out[4] = -a0 * w[0] + a2 * w[3] + w[5] + d * w[4]
    out[5] = -a0 * w[1] - a1 * w[3] + d * w[5]
    return out


def _compound_drive_impl(
    code, prm, alpha, cc, cc_gauge, nu, adjoint, y_start, h0, rtol, atol, A, B, C, E3, E5, w, K
):
    """Adaptive integration of the minor system from ``y_start`` to 0.

    Returns ``(status, n_steps)``; status 0 = success, 1 = step underflow,
    2 = step budget exhausted.  ``w`` is updated in place.
    """
    f = np.empty(6, dtype=np.complex128)
    ytmp = np.empty(6, dtype=np.complex128)
    ynew = np.empty(6, dtype=np.complex128)
    fnew = np.empty(6, dtype=np.complex128)
    _compound_rhs_impl(code, prm, alpha, cc, cc_gauge, nu, adjoint, y_start, w, f)
    t = y_start
    h_abs = h0
    n_steps = 0
    rejected = False
    safety = 0.9
    expo = -1.0 / 8.0
    while t > 0.0:
        if h_abs < 1e-13 * (1.0 + t):
            return 1, n_steps
        if n_steps > 3000000:
            return 2, n_steps
        h = -h_abs
        if h_abs > t:
            h = -t
        t_new = t + h
        for i in range(6):
            K[0, i] = f[i]
        for stg in range(1, 12):
            for i in range(6):
                acc = 0.0 + 0.0j
                for j in range(stg):
                    aa = A[stg, j]
                    if aa != 0.0:
                        acc += aa * K[j, i]
                ytmp[i] = w[i] + h * acc
            _compound_rhs_impl(
                code, prm, alpha, cc, cc_gauge, nu, adjoint, t + C[stg] * h, ytmp, K[stg]
            )
        for i in range(6):
            acc = 0.0 + 0.0j
            for j in range(12):
                bb = B[j]
                if bb != 0.0:
                    acc += bb * K[j, i]
            ynew[i] = w[i] + h * acc
        _compound_rhs_impl(code, prm, alpha, cc, cc_gauge, nu, adjoint, t_new, ynew, fnew)
        for i in range(6):
            K[12, i] = fnew[i]
        err5sq = 0.0
        err3sq = 0.0
        for i in range(6):
            sc = atol + max(abs(w[i]), abs(ynew[i])) * rtol
            e5 = 0.0 + 0.0j
            e3 = 0.0 + 0.0j
            for j in range(13):
                e5 += E5[j] * K[j, i]
                e3 += E3[j] * K[j, i]
            err5sq += (abs(e5) / sc) ** 2
            err3sq += (abs(e3) / sc) ** 2
        if err5sq == 0.0 and err3sq == 0.0:
            err = 0.0
        else:
            err = h_abs * err5sq / np.sqrt((err5sq + 0.01 * err3sq) * 6.0)
        if err < 1.0:
            factor = 10.0 if err == 0.0 else min(10.0, safety * err**expo)
            if rejected:
                factor = min(1.0, factor)
            t = t_new
            for i in range(6):
                w[i] = ynew[i]
                f[i] = fnew[i]
            h_abs *= factor
            rejected = False
            n_steps += 1
        else:
            h_abs *= max(0.2, safety * err**expo)
            rejected = True
    return 0, n_steps


if HAS_NUMBA:
    _compound_rhs = njit(cache=True)(_compound_rhs_impl)

    @njit(cache=True)
    def _compound_drive(
        code, prm, alpha, cc, cc_gauge, nu, adjoint, y_start, h0, rtol, atol, A, B, C, E3, E5, w, K
    ):
        f = np.empty(6, dtype=np.complex128)
        ytmp = np.empty(6, dtype=np.complex128)
        ynew = np.empty(6, dtype=np.complex128)
        fnew = np.empty(6, dtype=np.complex128)
        _compound_rhs(code, prm, alpha, cc, cc_gauge, nu, adjoint, y_start, w, f)
        t = y_start
        h_abs = h0
        n_steps = 0
        rejected = False
        safety = 0.9
        expo = -1.0 / 8.0
        while t > 0.0:
            if h_abs < 1e-13 * (1.0 + t):
                return 1, n_steps
            if n_steps > 3000000:
                return 2, n_steps
            h = -h_abs
            if h_abs > t:
                h = -t
            t_new = t + h
            for i in range(6):
                K[0, i] = f[i]
            for stg in range(1, 12):
                for i in range(6):
                    acc = 0.0 + 0.0j
                    for j in range(stg):
                        aa = A[stg, j]
                        if aa != 0.0:
                            acc += aa * K[j, i]
                    ytmp[i] = w[i] + h * acc
                _compound_rhs(
                    code, prm, alpha, cc, cc_gauge, nu, adjoint, t + C[stg] * h, ytmp, K[stg]
                )
            for i in range(6):
                acc = 0.0 + 0.0j
                for j in range(12):
                    bb = B[j]
                    if bb != 0.0:
                        acc += bb * K[j, i]
                ynew[i] = w[i] + h * acc
            _compound_rhs(code, prm, alpha, cc, cc_gauge, nu, adjoint, t_new, ynew, fnew)
            for i in range(6):
                K[12, i] = fnew[i]
            err5sq = 0.0
            err3sq = 0.0
            for i in range(6):
                sc = atol + max(abs(w[i]), abs(ynew[i])) * rtol
                e5 = 0.0 + 0.0j
                e3 = 0.0 + 0.0j
                for j in range(13):
                    e5 += E5[j] * K[j, i]
                    e3 += E3[j] * K[j, i]
                err5sq += (abs(e5) / sc) ** 2
                err3sq += (abs(e3) / sc) ** 2
            if err5sq == 0.0 and err3sq == 0.0:
                err = 0.0
            else:
                err = h_abs * err5sq / np.sqrt((err5sq + 0.01 * err3sq) * 6.0)
            if err < 1.0:
                factor = 10.0 if err == 0.0 else min(10.0, safety * err**expo)
                if rejected:
                    factor = min(1.0, factor)
                t = t_new
                for i in range(6):
                    w[i] = ynew[i]
                    f[i] = fnew[i]
                h_abs *= factor
                rejected = False
                n_steps += 1
            else:
                h_abs *= max(0.2, safety * err**expo)
                rejected = True
        return 0, n_steps

else:
    _compound_rhs = _compound_rhs_impl
    _compound_drive = _compound_drive_impl


def compound_minors(profile_code, prm, alpha, c, nu, adjoint, y_start, tol, c_gauge=None):
    """Integrate the viscous minor system wall-ward and return the state at 0.

    Parameters mirror the companion coefficients: ``profile_code`` indexes
    the closed-form profile family (see ``PROFILE_CODES``), ``prm`` its
    parameter vector, ``adjoint`` selects the lane.  The far-field seed is
    the constant-coefficient minor vector of the pair (e^{-alpha y},
    e^{-mu y}) normalized by (alpha - mu).  Returns ``(w, n_steps)`` with
    ``w`` the six minors at the wall.
    """
    if not (1e-13 <= tol <= 1e-6):
        raise ValueError("tol must lie in [1e-13, 1e-6]")
    alpha = float(alpha)
    nu = float(nu)
    if c_gauge is None:
        c_gauge = c
    cc = complex(np.conj(c)) if adjoint else complex(c)
    cc_gauge = complex(np.conj(c_gauge)) if adjoint else complex(c_gauge)
    pm = -1j if adjoint else 1j
    A, B, C, E3, E5 = _dp853_tables()
    g0 = _profile_u_tail(profile_code, prm, y_start) - cc
    mu0 = np.sqrt((alpha * alpha * nu + pm * alpha * g0) / nu)
    w = np.array(
        [
            1.0,
            -(alpha + mu0),
            alpha * alpha + alpha * mu0 + mu0 * mu0,
            alpha * mu0,
            -alpha * mu0 * (alpha + mu0),
            alpha * alpha * mu0 * mu0,
        ],
        dtype=np.complex128,
    )
    K = np.empty((13, 6), dtype=np.complex128)
    scale = float(np.max(np.abs(w)))
    h0 = min(0.05, 0.25 / (1.0 + abs(mu0)))
    status, n_steps = _compound_drive(
        int(profile_code),
        np.ascontiguousarray(prm, dtype=np.float64),
        alpha,
        cc,
        cc_gauge,
        nu,
        bool(adjoint),
        float(y_start),
        h0,
        tol,
        tol * scale * 1e-3,
        A,
        B,
        C,
        E3,
        E5,
        w,
        K,
    )
    if status == 1:
        raise RuntimeError("compound integration: step size underflow")
    if status == 2:
        raise RuntimeError("compound integration: step budget exhausted")
    return w, n_steps


def _profile_u_tail(code, prm, y):
    if code == 0:
        e = np.exp(-y)
        return prm[0] * (1.0 - 3.0 * e + 3.0 * e * e - e * e * e)
    t = np.tanh(y)
    return prm[0] * t * t * t
