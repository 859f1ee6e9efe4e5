"""Shear-flow profiles and spectral parameters.

A profile is the background velocity ``U(y)`` on the half line ``[0, y_max]``
together with its first four derivatives.  Every profile registered here
satisfies the structural hypotheses the rest of the package relies on:

* ``u(0) = u1(0) = u2(0) = 0`` exactly,
* all derivatives decay like ``exp(-eta0*y)`` at infinity,
* ``u`` is bounded and tends to a finite limit ``u_inf``.

``validate_assumptions`` measures these properties numerically and also
checks the critical-layer guard ``inf_y |u(y) - c| > 0`` for a given phase
speed, which every downstream construction assumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ShearProfile",
    "SpectralParams",
    "ValidationReport",
    "make_profile",
    "validate_assumptions",
    "eval_operator_coeffs",
]


@dataclass(frozen=True)
class ShearProfile:
    """Immutable velocity profile with derivative evaluators.

    Attributes
    ----------
    name : str
        Family identifier.
    u, u1, u2, u3, u4 : callable
        Velocity and its first four derivatives; vectorised over numpy
        arrays and safe for scalar input.
    u_inf : float
        Limit of ``u`` at infinity.
    eta0 : float
        Declared exponential decay rate of the derivatives.
    y_max : float
        Truncation point of the half line.
    u_higher : callable, optional
        ``u_higher(k, y)`` giving the k-th derivative (k >= 1) in closed
        form for families that have one; ``None`` otherwise.  Orders above
        four are only needed by high-order residual checks; callers must
        fall back to spline differentiation when this is ``None``.
    """

    name: str
    u: Callable[[np.ndarray], np.ndarray]
    u1: Callable[[np.ndarray], np.ndarray]
    u2: Callable[[np.ndarray], np.ndarray]
    u3: Callable[[np.ndarray], np.ndarray]
    u4: Callable[[np.ndarray], np.ndarray]
    u_inf: float
    eta0: float
    y_max: float
    u_higher: Optional[Callable[[int, np.ndarray], np.ndarray]] = field(
        default=None, repr=False, compare=False
    )

    def derivative(self, k: int):
        """Return the evaluator for the k-th derivative (k = 0..4)."""
        return (self.u, self.u1, self.u2, self.u3, self.u4)[k]


@dataclass(frozen=True)
class SpectralParams:
    """Wavenumber, phase speed, viscosity and Navier exponent.

    ``alpha`` is kept as a float: the structural theory only uses
    ``alpha != 0``, and the interesting (unstable) wavenumbers of the
    built-in profiles are not integers.  ``nu = 0`` selects the inviscid
    operators; viscous operations require ``nu > 0`` and enforce the
    standing scale separation ``|alpha| <= nu**(-zeta)`` with
    ``zeta < 1/2``.
    """

    alpha: float
    c: complex
    nu: float = 0.0
    gamma: float = 10.0

    def __post_init__(self):
        if self.alpha == 0:
            raise ValueError("alpha must be nonzero")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")

    def check_viscous_scale(self, zeta: float = 0.49) -> bool:
        """``|alpha| <= nu**(-zeta)`` for some ``zeta < 1/2``."""
        if self.nu == 0.0 or abs(self.alpha) <= 1.0:
            return True
        return abs(self.alpha) <= self.nu ** (-zeta)

    def conjugated(self) -> "SpectralParams":
        return SpectralParams(self.alpha, np.conj(self.c), self.nu, self.gamma)

    def with_c(self, c: complex) -> "SpectralParams":
        return SpectralParams(self.alpha, complex(c), self.nu, self.gamma)

    def with_nu(self, nu: float) -> "SpectralParams":
        return SpectralParams(self.alpha, self.c, float(nu), self.gamma)


# ---------------------------------------------------------------------------
# Profile families
# ---------------------------------------------------------------------------


def _cubic_exp(u_inf: float, y_max: float) -> ShearProfile:
    """``u(y) = u_inf * (1 - exp(-y))**3``.

    All derivatives are short exponential sums, so every downstream
    residual check can rely on machine-accurate profile derivatives of
    any order:

        u^(k)(y) = u_inf * (-3*(-1)**k e^{-y} + 3*(-2)**k e^{-2y}
                            - (-3)**k e^{-3y}),  k >= 1.
    """

    def u(y):
        e = np.exp(-np.asarray(y, dtype=np.complex128 if np.iscomplexobj(y) else np.float64))
        return u_inf * (-3.0 * e + 3.0 * e**2 - e**3 + 1.0)

    def u_higher(k, y):
        e = np.exp(-np.asarray(y, dtype=np.complex128 if np.iscomplexobj(y) else np.float64))
        s = (-1.0) ** k
        return u_inf * (-3.0 * s * e + 3.0 * s * (2.0**k) * e**2 - s * (3.0**k) * e**3)

    return ShearProfile(
        name="cubic_exp",
        u=u,
        u1=lambda y: u_higher(1, y),
        u2=lambda y: u_higher(2, y),
        u3=lambda y: u_higher(3, y),
        u4=lambda y: u_higher(4, y),
        u_inf=float(u_inf),
        eta0=1.0,
        y_max=float(y_max),
        u_higher=u_higher,
    )


def _tanh_cubed(u_inf: float, y_max: float) -> ShearProfile:
    """``u(y) = u_inf * tanh(y)**3`` (decay rate 2 at infinity)."""

    def u(y):
        return u_inf * np.tanh(y) ** 3

    def u1(y):
        t = np.tanh(y)
        return u_inf * 3.0 * t**2 * (1.0 - t**2)

    def u2(y):
        t = np.tanh(y)
        return u_inf * (6.0 * t - 12.0 * t**3) * (1.0 - t**2)

    def u3(y):
        t = np.tanh(y)
        return u_inf * (1.0 - t**2) * (6.0 - 54.0 * t**2 + 60.0 * t**4)

    def u4(y):
        t = np.tanh(y)
        return u_inf * (1.0 - t**2) * (-120.0 * t + 456.0 * t**3 - 360.0 * t**5)

    return ShearProfile(
        name="tanh_cubed",
        u=u,
        u1=u1,
        u2=u2,
        u3=u3,
        u4=u4,
        u_inf=float(u_inf),
        eta0=2.0,
        y_max=float(y_max),
    )


def _custom_table(
    y_table: np.ndarray, u_table: np.ndarray, y_max: float, eta0: float
) -> ShearProfile:
    from scipy.interpolate import make_interp_spline

    y_table = np.asarray(y_table, dtype=float)
    u_table = np.asarray(u_table, dtype=float)
    if y_table.ndim != 1 or y_table.shape != u_table.shape or len(y_table) < 8:
        raise ValueError("custom_table needs matching 1-d tables with >= 8 points")
    if y_table[0] != 0.0:
        raise ValueError("custom_table must start at y = 0")

    # The table itself must be consistent with u(0) = u'(0) = u''(0) = 0:
    # a quintic fit through the first samples exposes linear/quadratic
    # content without aliasing the legitimate cubic-and-up behaviour.
    scale = max(1.0, float(np.max(np.abs(u_table))))
    coeffs = np.polyfit(y_table[:8], u_table[:8], 5)
    slope, half_curv = coeffs[-2], coeffs[-3]
    if (
        abs(u_table[0]) > 1e-12 * scale
        or abs(slope) > 0.05 * scale
        or abs(half_curv) > 0.25 * scale
    ):
        raise ValueError(
            "custom_table violates u(0) = u'(0) = u''(0) = 0 "
            f"(fitted origin slope {slope:.3e}, curvature {2 * half_curv:.3e})"
        )

    # Clamp the spline so the interpolant satisfies the origin conditions
    # exactly (the far end is flat for admissible profiles, so clamping it
    # to zero slope/curvature is consistent as well).
    u_table = u_table.copy()
    u_table[0] = 0.0
    spl = make_interp_spline(
        y_table,
        u_table,
        k=5,
        bc_type=([(1, 0.0), (2, 0.0)], [(1, 0.0), (2, 0.0)]),
    )
    derivs = [spl.derivative(k) for k in range(1, 5)]

    u_inf = float(u_table[-1])

    def wrap(f):
        def g(y):
            return np.asarray(f(np.asarray(y, dtype=float)))

        return g

    return ShearProfile(
        name="custom_table",
        u=wrap(spl),
        u1=wrap(derivs[0]),
        u2=wrap(derivs[1]),
        u3=wrap(derivs[2]),
        u4=wrap(derivs[3]),
        u_inf=u_inf,
        eta0=float(eta0),
        y_max=float(y_max),
    )


def make_profile(
    name: str,
    params: Sequence[float] = (),
    *,
    y_max: float = 30.0,
    table: Optional[dict] = None,
    eta0: Optional[float] = None,
) -> ShearProfile:
    """Construct a registered profile family.

    Parameters
    ----------
    name : {"cubic_exp", "tanh_cubed", "custom_table"}
    params : sequence of float
        Family parameters; for the closed-form families a single optional
        amplitude ``u_inf`` (default 1.0).
    y_max : float
        Truncation point of the half line (default 30, which puts the
        ``exp(-y)`` far-field truncation below double-precision noise).
    table : dict, optional
        For ``custom_table``: ``{"y": [...], "u": [...]}`` samples, splined
        with order 5 so fourth derivatives exist.
    eta0 : float, optional
        Declared decay rate for ``custom_table`` (default 1.0).
    """
    if name == "cubic_exp":
        u_inf = float(params[0]) if len(params) else 1.0
        return _cubic_exp(u_inf, y_max)
    if name == "tanh_cubed":
        u_inf = float(params[0]) if len(params) else 1.0
        return _tanh_cubed(u_inf, y_max)
    if name == "custom_table":
        if table is None:
            raise ValueError("custom_table requires table={'y': ..., 'u': ...}")
        return _custom_table(
            np.asarray(table["y"], dtype=float),
            np.asarray(table["u"], dtype=float),
            y_max,
            1.0 if eta0 is None else float(eta0),
        )
    raise ValueError(f"unknown profile family {name!r}")


# ---------------------------------------------------------------------------
# Hypothesis validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    """Numerical check of the structural hypotheses of a profile.

    ``failures`` lists the names of violated assumptions; ``passed`` is
    True when it is empty.
    """

    eta0_fitted: float
    eta0_declared: float
    min_dist_to_c: float
    origin_values: tuple
    decay_constants: tuple
    failures: list

    @property
    def passed(self) -> bool:
        return not self.failures


_VALIDATION_GRID_N = 2001


def validate_assumptions(p: ShearProfile, s: SpectralParams) -> ValidationReport:
    """Check origin conditions, derivative decay, and the critical-layer guard.

    Failures are reported, never raised.  The checks:

    * ``u(0) = u1(0) = u2(0) = 0`` to machine precision;
    * fitted decay rate of ``|u1|`` (log-linear least squares on
      ``[2, 20]``) within 10% of the declared ``eta0``;
    * ``inf_y |u(y) - c|`` positive -- fails whenever ``c`` is real and
      lies in the closure of the range of ``u``;
    * the viscous scale separation ``|alpha| <= nu**(-zeta)``, ``zeta < 1/2``,
      when ``nu > 0``.
    """
    failures = []
    grid = np.linspace(0.0, p.y_max, _VALIDATION_GRID_N)

    origin = (float(p.u(0.0)), float(p.u1(0.0)), float(p.u2(0.0)))
    scale = max(1.0, abs(p.u_inf))
    if max(abs(v) for v in origin) > 1e-12 * scale:
        failures.append("origin_conditions")

    # Fit the decay rate of u1 on [2, min(20, y_max - 2)].
    y_lo, y_hi = 2.0, min(20.0, p.y_max - 2.0)
    yfit = grid[(grid >= y_lo) & (grid <= y_hi)]
    vals = np.abs(np.asarray(p.u1(yfit), dtype=float))
    mask = vals > 1e-300
    slope, _ = np.polyfit(yfit[mask], np.log(vals[mask]), 1)
    eta0_fitted = -float(slope)
    if abs(eta0_fitted - p.eta0) > 0.1 * p.eta0:
        failures.append("decay_rate")

    # Envelope constants |u^(k)(y)| <= C_k exp(-eta0 y); reported, and the
    # envelope must at least be finite over the grid.
    decay_constants = []
    env = np.exp(p.eta0 * grid)
    for k in range(1, 5):
        vals_k = np.abs(np.asarray(p.derivative(k)(grid), dtype=float))
        c_k = float(np.max(vals_k * env))
        decay_constants.append(c_k)
        if not np.isfinite(c_k):
            failures.append(f"decay_envelope_u{k}")

    # Critical-layer guard.
    dist = np.abs(np.asarray(p.u(grid), dtype=complex) - s.c)
    min_dist = float(np.min(dist))
    u_vals = np.asarray(p.u(grid), dtype=float)
    u_lo, u_hi = float(np.min(u_vals)), float(np.max(u_vals))
    c_real_in_range = abs(s.c.imag) < 1e-14 and (u_lo - 1e-12 <= s.c.real <= u_hi + 1e-12)
    if c_real_in_range or min_dist == 0.0:
        failures.append("critical_layer")

    if s.nu > 0 and not s.check_viscous_scale():
        failures.append("alpha_nu_scale")

    return ValidationReport(
        eta0_fitted=eta0_fitted,
        eta0_declared=p.eta0,
        min_dist_to_c=min_dist,
        origin_values=origin,
        decay_constants=tuple(decay_constants),
        failures=failures,
    )


def eval_operator_coeffs(p: ShearProfile, s: SpectralParams, y: float):
    """Coefficients of the stability operators at a point.

    Returns ``(u_minus_c, u2, visc_factor, u_minus_cbar)`` where
    ``visc_factor = nu/(i*alpha)`` (0 for the inviscid case) and the last
    entry is the adjoint variant ``u(y) - conj(c)``.
    """
    if not (0.0 <= y <= p.y_max):
        raise ValueError(f"y = {y} outside [0, {p.y_max}]")
    uy = complex(p.u(y))
    visc = s.nu / (1j * s.alpha) if s.nu else 0.0 + 0.0j
    return (uy - s.c, complex(p.u2(y)), visc, uy - np.conj(s.c))
