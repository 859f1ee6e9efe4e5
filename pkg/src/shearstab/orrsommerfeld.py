"""Viscous spectral layer: fast/slow mode expansions and Evans determinants.

For ``nu > 0`` the second-order operators of :mod:`shearstab.rayleigh`
acquire a singular fourth-order perturbation:

* original lane (token ``"orr"``):
  ``(U - c)(phi'' - alpha^2 phi) - U'' phi - (nu/(i alpha)) D2a^2 phi``
* adjoint lane (token ``"orr_star"``):
  ``(U - conj c)(phi'' - alpha^2 phi) + 2 U' phi' + (nu/(i alpha)) D2a^2 phi``

Solutions split into two families.  *Fast* modes vary on the scale
``sqrt(nu)``: they are built here as exponentials of an explicit phase
expansion ``phi = exp(theta/sqrt(nu))`` with ``theta' = sum_j theta'_j
nu^{j/2}`` whose first three coefficient functions are in closed form and
whose higher orders are generated numerically.  *Slow* modes perturb the
inviscid solutions regularly in ``nu``; each correction term solves an
inviscid problem with the biharmonic image of the previous term as
forcing, by the same tail-fixed-point + wall-ward-integration route the
inviscid layer uses.

From one decaying slow mode and one decaying fast mode the 2x2 boundary
determinant (Evans function) under the Navier slip condition
``phi'(0) = nu^gamma phi''(0)`` detects viscous eigenvalues.  An
independent exact determinant integrates the six 2x2 minors of the
fourth-order system (compound matrix) from ``y_max`` to the wall.
``track_eigenvalues`` continues an inviscid eigenvalue down a geometric
viscosity grid, Newton-refining on the regularized expansion determinant,
polishing on the exact one, and certifying the root count by winding
numbers on circles around the inviscid eigenvalue.

All constructions require ``alpha > 0`` (the fast scaling and the kernel
quadratures are built for rightward-propagating modes) and ``Im c`` with
``alpha*nu + Im c > 0`` so the fast exponent stays in the right half
plane.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import _kernels, rayleigh
from ._kernels import exp_abs_convolve, exp_abs_convolve_d
from .odecore import (
    CellQuadrature,
    Contour,
    Mesh,
    default_mesh,
    integrate_system,
    newton_root,
    resample_to,
    spline_derivative,
    winding_number,
)
from .profiles import ShearProfile, SpectralParams
from .rayleigh import ADJOINT, DECAYING, GROWING, ORIGINAL, fundamental_solution

__all__ = [
    "ORR",
    "ORR_STAR",
    "DerivativeQualityWarning",
    "FastExponent",
    "WkbExpansion",
    "SlowExpansion",
    "EvansSample",
    "EigenvalueTrack",
    "mu_star",
    "wkb_fast_mode",
    "fast_mode_residual",
    "apply_operator_viscous",
    "slow_mode_expansion",
    "evans",
    "evans_exact",
    "o_gamma",
    "track_eigenvalues",
    "export_track_csv",
    "export_scan_csv",
]

ORR = "orr"
ORR_STAR = "orr_star"

_FD_H = 1e-4


class DerivativeQualityWarning(UserWarning):
    """Raised when spline differentiation backs a derivative row in a
    regime (``nu < 1e-6``) where its noise floor may matter."""


def _lane(which: str) -> str:
    """Normalize an operator token to the internal lane constant."""
    if which in (ORR, ORIGINAL, "ray"):
        return ORIGINAL
    if which in (ORR_STAR, ADJOINT, "ray_star"):
        return ADJOINT
    raise ValueError(f"unknown operator {which!r}")


def _c_lane(s: SpectralParams, lane: str) -> complex:
    return complex(np.conj(s.c)) if lane == ADJOINT else complex(s.c)


def _branch_sign(sign) -> float:
    if sign in (-1, -1.0, "-", "minus", DECAYING):
        return -1.0
    if sign in (1, +1.0, "+", "plus", GROWING):
        return 1.0
    raise ValueError(f"sign must be +1 or -1, got {sign!r}")


def _require_viscous(s: SpectralParams):
    if not s.nu > 0.0:
        raise ValueError("viscous operations require nu > 0")
    if not s.alpha > 0.0:
        raise ValueError("viscous expansions require alpha > 0")
    if not s.check_viscous_scale():
        raise ValueError("alpha exceeds the admissible viscous scale nu**(-zeta)")


# ---------------------------------------------------------------------------
# Fast exponent
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FastExponent:
    """Pointwise fast (boundary-layer) exponent over a set of heights.

    ``mu_values[i]`` is the principal square root
    ``|alpha|^{1/2} nu^{-1/2} sqrt(alpha nu -/+ i (U - c*))`` at ``y[i]``
    (minus/adjoint with ``c* = conj c``, plus/original with ``c* = c``).
    The radicand has real part ``alpha*nu + Im c``; requiring it positive
    places the radicand in the right half plane, hence ``mu`` in the
    sector ``|arg| < pi/4`` and in particular ``Re mu > 0``.
    """

    params: SpectralParams
    operator: str
    y: np.ndarray
    mu_values: np.ndarray
    branch: str = "principal"
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)


def _mu_values(p: ShearProfile, s: SpectralParams, lane: str, y: np.ndarray) -> np.ndarray:
    if not s.nu > 0.0:
        raise ValueError("fast exponent requires nu > 0")
    if s.alpha == 0.0:
        raise ValueError("fast exponent requires alpha != 0")
    pm = -1j if lane == ADJOINT else 1j
    cc = _c_lane(s, lane)
    radicand = s.alpha * s.nu + pm * (p.u(y) - cc)
    if np.any(radicand.real <= 0.0):
        raise ValueError(
            "fast exponent leaves the right half plane: need "
            f"alpha*nu + Im c > 0, got {float(np.min(radicand.real)):.3e}"
        )
    return np.sqrt(abs(s.alpha) / s.nu) * np.sqrt(radicand)


def mu_star(
    p: ShearProfile,
    s: SpectralParams,
    which: str = ORR_STAR,
    y: Optional[np.ndarray] = None,
    mesh: Optional[Mesh] = None,
) -> FastExponent:
    """Fast decay/growth exponent of the viscous operator at each height.

    Defaults to the adjoint lane.  ``y`` overrides the sample points
    (otherwise the nodes of ``mesh`` or of the default nu-free mesh).
    Raises ``ValueError`` when ``alpha*nu + Im c <= 0`` somewhere (the
    principal branch would leave the sector ``|arg| < pi/4``).
    """
    lane = _lane(which)
    if y is None:
        mesh = mesh or default_mesh(p.y_max, 0.0, s.alpha)
        y = mesh.nodes
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu = _mu_values(p, s, lane, y)
    return FastExponent(params=s, operator=lane, y=y, mu_values=mu)


# ---------------------------------------------------------------------------
# Fast (boundary-layer) modes: phase expansion
# ---------------------------------------------------------------------------


def _fd_rows(fn: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float = _FD_H) -> np.ndarray:
    """Five-point central rows (f, f', f'', f''') of a vectorized closure."""
    f_m2 = np.asarray(fn(y - 2.0 * h))
    f_m1 = np.asarray(fn(y - h))
    f_0 = np.asarray(fn(y))
    f_p1 = np.asarray(fn(y + h))
    f_p2 = np.asarray(fn(y + 2.0 * h))
    d1 = (f_m2 - 8.0 * f_m1 + 8.0 * f_p1 - f_p2) / (12.0 * h)
    d2 = (-f_m2 + 16.0 * f_m1 - 30.0 * f_0 + 16.0 * f_p1 - f_p2) / (12.0 * h * h)
    d3 = (f_p2 - 2.0 * f_p1 + 2.0 * f_m1 - f_m2) / (2.0 * h**3)
    return np.array([f_0, d1, d2, d3])


class _FastFamily:
    """Closed-form phase-slope coefficients of the fast expansion.

    With ``W = alpha^2 nu + pm * i alpha (U - c*)`` (pm = -1 adjoint,
    +1 original... folded into the sign of the imaginary unit below) and
    ``M = sqrt(W)``, the two branches of the leading slope are
    ``theta'_0,± = ± M``; the first and second corrections are closed
    expressions in M and its derivatives.  Orders j >= 3 are produced by
    dividing the symbol residual by its linearization in the next
    coefficient (see ``wkb_fast_mode``).
    """

    def __init__(self, p: ShearProfile, s: SpectralParams, lane: str):
        self.p = p
        self.s = s
        self.lane = lane
        self.alpha = float(s.alpha)
        self.nu = float(s.nu)
        self.a2 = self.alpha * self.alpha * self.nu
        self.pm = -1j if lane == ADJOINT else 1j
        self.cc = _c_lane(s, lane)

    # -- profile/symbol primitives (vectorized over y) --

    def g(self, y):
        return self.p.u(y) - self.cc

    def bigW(self, y):
        return self.a2 + self.pm * self.alpha * self.g(y)

    def M(self, y):
        return np.sqrt(self.bigW(y))

    def Mp(self, y):
        return self.pm * self.alpha * self.p.u1(y) / (2.0 * self.M(y))

    def Mpp(self, y):
        return (self.pm * self.alpha * self.p.u2(y) / 2.0 - self.Mp(y) ** 2) / self.M(y)

    def Mppp(self, y):
        return (
            self.pm * self.alpha * self.p.u3(y) / 2.0 - 3.0 * self.Mp(y) * self.Mpp(y)
        ) / self.M(y)

    # -- closed-form phase-slope coefficients --

    def t0_rows(self, sb: float, y: np.ndarray) -> np.ndarray:
        return np.array(
            [sb * self.M(y), sb * self.Mp(y), sb * self.Mpp(y), sb * self.Mppp(y)]
        )

    def t1(self, sb: float, y: np.ndarray) -> np.ndarray:
        if self.lane == ADJOINT:
            alpha = self.alpha
            U1 = self.p.u1(y)
            g = self.g(y)
            M = self.M(y)
            Mp = self.Mp(y)
            num = (
                -1j * alpha * U1 * (sb * M)
                + 1j * alpha * g * (sb * Mp)
                - 6.0 * (sb * M) * (sb * Mp)
                - 2.0 * self.a2 * (sb * Mp)
            )
            return -num / (2j * alpha * g)
        # Original lane: both branches share the same first correction.
        return -self.Mp(y) / (2.0 * self.M(y)) - self.p.u1(y) / self.g(y)

    def t2(self, sb: float, y: np.ndarray) -> np.ndarray:
        alpha = self.alpha
        g = self.g(y)
        W = self.bigW(y)
        M = self.M(y)
        Mp = self.Mp(y)
        Mpp = self.Mpp(y)
        t1 = self.t1(sb, y)
        t1p = _fd_rows(lambda x: self.t1(sb, x), y)[1]
        if self.lane == ADJOINT:
            sgn = 1.0
            first = 2.0 * self.p.u1(y)
            extra = 0.0
        else:
            sgn = -1.0
            first = 0.0
            extra = -self.p.u2(y)
        a2w = alpha * alpha
        A2 = (
            g * (t1p + t1**2 - a2w)
            + first * t1
            + extra
            + sgn
            * (
                4.0 * M * Mpp
                + 3.0 * Mp**2
                + 6.0 * W * (t1p + t1**2)
                + 12.0 * M * Mp * t1
                - 2.0 * a2w * W
            )
            / (1j * alpha)
        )
        B = 2.0 * sb * M * (g + sgn * 2.0 * W / (1j * alpha))
        corr = -sgn * 1j * alpha * W
        return -(A2 + corr) / B

    def linearization(self, sb: float, y: np.ndarray) -> np.ndarray:
        """d(symbol)/d(next slope coefficient): divisor of the induction."""
        sgn = 1.0 if self.lane == ADJOINT else -1.0
        M = self.M(y)
        return 2.0 * sb * M * (self.g(y) + sgn * 2.0 * self.bigW(y) / (1j * self.alpha))

    def term_closure(self, j: int, sb: float) -> Callable[[np.ndarray], np.ndarray]:
        if j == 1:
            return lambda y: self.t1(sb, y)
        if j == 2:
            return lambda y: self.t2(sb, y)
        raise ValueError("closed forms exist for j <= 2 only")


def _symbol_residual(fam: _FastFamily, y: np.ndarray, q_rows: np.ndarray) -> np.ndarray:
    """(operator phi)/phi for phi with logarithmic-derivative rows q_rows."""
    q0, q1, q2, q3 = q_rows
    alpha = fam.alpha
    a2 = alpha * alpha
    g = fam.g(y)
    second = q1 + q0**2 - a2
    if fam.lane == ADJOINT:
        ray = g * second + 2.0 * fam.p.u1(y) * q0
        visc_sign = 1.0
    else:
        ray = g * second - fam.p.u2(y)
        visc_sign = -1.0
    quartic = (
        (q3 + 4.0 * q0 * q2 + 3.0 * q1**2 + 6.0 * q0**2 * q1 + q0**4)
        - 2.0 * a2 * (q1 + q0**2)
        + a2 * a2
    )
    return ray + visc_sign * (fam.nu / (1j * alpha)) * quartic


@dataclass(frozen=True)
class WkbExpansion:
    """Fast-mode phase expansion of one branch.

    ``theta_prime[j, b]`` holds the nu-free slope coefficient
    ``theta'_j`` of branch b (0 = decaying ``-``, 1 = growing ``+``) at
    the mesh nodes; the composed slope of the stored branch is
    ``theta' = sum_j theta_prime[j] * nu^{j/2}`` and the mode is
    ``phi = exp(theta/sqrt(nu))`` with ``theta(0) = 0`` (so ``phi(0)=1``).
    ``values`` holds rows (phi, phi', ..., phi'''') of the stored branch
    at the nodes; for the growing branch the far-end entries may overflow
    to inf -- consumers needing the growing mode at large ``y`` should
    work with ``theta`` and the slope rows (``rows_at`` recomputes them
    anywhere).
    """

    profile: ShearProfile
    params: SpectralParams
    operator: str
    sign: int
    order: int
    mesh: Mesh
    theta_prime: np.ndarray
    theta: np.ndarray
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)
    _family: object = field(default=None, repr=False, compare=False)
    _term_rows: tuple = field(default=(), repr=False, compare=False)

    def q_rows_at(self, y) -> np.ndarray:
        """Rows (q, q', q'', q''') of the composed slope at arbitrary y."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        fam = self._family
        nu = self.params.nu
        sb = float(self.sign)
        out = np.zeros((4, len(y)), dtype=complex)
        for j in range(2 * self.order + 1):
            if j == 0:
                rows = fam.t0_rows(sb, y)
            elif j <= 2:
                rows = _fd_rows(fam.term_closure(j, sb), y)
            else:
                nodes = self.mesh.nodes
                rows = np.array(
                    [resample_to(nodes, self._term_rows[j][k], y) for k in range(4)]
                )
            out += rows * nu ** ((j - 1) / 2.0)
        return out

    def theta_at(self, y) -> np.ndarray:
        """Accumulated phase at arbitrary y (theta(0) = 0)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        nodes = self.mesh.nodes
        idx = np.clip(np.searchsorted(nodes, y) - 1, 0, len(nodes) - 2)
        glx, glw = leggauss(12)
        out = np.empty(len(y), dtype=complex)
        for i, (yy, j) in enumerate(zip(y, idx)):
            a = nodes[j]
            half = 0.5 * (yy - a)
            pts = a + half * (glx + 1.0)
            slope = self._slope_at(pts)
            out[i] = self.theta[j] + half * np.dot(glw, slope)
        return out

    def _slope_at(self, y: np.ndarray) -> np.ndarray:
        fam = self._family
        nu = self.params.nu
        sb = float(self.sign)
        slope = sb * fam.M(y).astype(complex)
        for j in range(1, 2 * self.order + 1):
            if j <= 2:
                tj = fam.term_closure(j, sb)(y)
            else:
                tj = resample_to(self.mesh.nodes, self._term_rows[j][0], y)
            slope = slope + tj * nu ** (j / 2.0)
        return slope

    def rows_at(self, y) -> np.ndarray:
        """Rows (phi, ..., phi'''') at arbitrary y, phase-accurate."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        q = self.q_rows_at(y)
        theta = self.theta_at(y)
        with np.errstate(over="ignore", under="ignore"):
            phi = np.exp(theta / np.sqrt(self.params.nu))
        return _mode_rows(q, phi)


def _mode_rows(q_rows: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """(phi..phi'''') from the logarithmic-derivative rows and phi."""
    q0, q1, q2, q3 = q_rows
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        r1 = q0 * phi
        r2 = (q1 + q0**2) * phi
        r3 = (q2 + 3.0 * q0 * q1 + q0**3) * phi
        r4 = (q3 + 4.0 * q0 * q2 + 3.0 * q1**2 + 6.0 * q0**2 * q1 + q0**4) * phi
    return np.array([phi, r1, r2, r3, r4])


def wkb_fast_mode(
    p: ShearProfile,
    s: SpectralParams,
    N: int,
    sign,
    operator: str = ORR_STAR,
    mesh: Optional[Mesh] = None,
) -> WkbExpansion:
    """Fast mode of one branch as an exponential of a phase expansion.

    ``N`` is the expansion order: the slope carries coefficients
    ``theta'_j`` for j = 0..2N.  Orders j <= 2 come from closed formulas;
    higher orders are generated inductively by dividing the symbol
    residual of the partial sum by its linearization and
    spline-differentiating the resulting node arrays (their derivative
    rows inherit spline quality, which is acceptable because they enter
    the residual at relative order nu^{(j-2)/2}).

    Both branches' slope coefficient arrays are stored in
    ``theta_prime``; values/theta are assembled for the requested
    ``sign``.
    """
    lane = _lane(operator)
    N = int(N)
    if N < 0:
        raise ValueError("expansion order must be >= 0")
    _require_viscous(s)
    sb_req = _branch_sign(sign)
    mesh = mesh or default_mesh(p.y_max, 0.0, s.alpha)
    nodes = mesh.nodes
    fam = _FastFamily(p, s, lane)
    quad = CellQuadrature(mesh, 12)
    nu = s.nu
    n_terms = 2 * N + 1

    term_rows = {-1.0: [], 1.0: []}  # per branch: list of (4, n) node ladders
    for sb in (-1.0, 1.0):
        rows = [fam.t0_rows(sb, nodes)]
        for j in range(1, min(n_terms, 3)):
            rows.append(_fd_rows(fam.term_closure(j, sb), nodes))
        for j in range(3, n_terms):
            q_rows = np.zeros((4, len(nodes)), dtype=complex)
            for i, r in enumerate(rows):
                q_rows += r * nu ** ((i - 1) / 2.0)
            resid = _symbol_residual(fam, nodes, q_rows)
            tj = -resid / (nu ** ((j - 2) / 2.0) * fam.linearization(sb, nodes))
            rows.append(
                np.array(
                    [tj]
                    + [spline_derivative(nodes, tj, k) for k in (1, 2, 3)]
                )
            )
        term_rows[sb] = rows

    theta_prime = np.array(
        [[term_rows[-1.0][j][0], term_rows[1.0][j][0]] for j in range(n_terms)]
    )

    rows_req = term_rows[sb_req]
    q_rows = np.zeros((4, len(nodes)), dtype=complex)
    for j, r in enumerate(rows_req):
        q_rows += r * nu ** ((j - 1) / 2.0)

    # Phase accumulation: integrate the slope over the quadrature points.
    slope_q = sb_req * fam.M(quad.points).astype(complex)
    for j in range(1, n_terms):
        if j <= 2:
            tq = fam.term_closure(j, sb_req)(quad.points)
        else:
            tq = resample_to(nodes, rows_req[j][0], quad.points)
        slope_q = slope_q + tq * nu ** (j / 2.0)
    theta = quad.cumulative_at_nodes(slope_q)

    with np.errstate(over="ignore", under="ignore"):
        phi = np.exp(theta / np.sqrt(nu))
    values = _mode_rows(q_rows, phi)

    resid = _symbol_residual(fam, nodes, q_rows)
    diagnostics = {
        "residual_symbol": resid,
        "residual_sup": float(np.max(np.abs(resid))),
        "branch": "-" if sb_req < 0 else "+",
    }
    exp_obj = WkbExpansion(
        profile=p,
        params=s,
        operator=lane,
        sign=int(sb_req),
        order=N,
        mesh=mesh,
        theta_prime=theta_prime,
        theta=theta,
        values=values,
        diagnostics=diagnostics,
        _family=fam,
        _term_rows=tuple(tuple(r) for r in rows_req),
    )
    return exp_obj


def fast_mode_residual(exp: WkbExpansion, y: Optional[np.ndarray] = None) -> np.ndarray:
    """Symbol residual (operator phi)/phi of a fast expansion.

    Independent of the stored diagnostics: recomposes the slope rows (at
    the mesh nodes or at ``y``) and pushes them through the full
    fourth-order symbol.
    """
    if y is None:
        y = exp.mesh.nodes
    y = np.atleast_1d(np.asarray(y, dtype=float))
    q_rows = exp.q_rows_at(y)
    return _symbol_residual(exp._family, y, q_rows)


# ---------------------------------------------------------------------------
# Pointwise application of the viscous operators
# ---------------------------------------------------------------------------


def apply_operator_viscous(
    p: ShearProfile,
    s: SpectralParams,
    which: str,
    f_rows: np.ndarray,
    y: Optional[np.ndarray] = None,
    mesh: Optional[Mesh] = None,
) -> np.ndarray:
    """Apply the fourth-order operator to derivative rows (f, f', ...).

    ``which`` is ``"orr"`` (original) or ``"orr_star"`` (adjoint); the
    inviscid tokens are accepted as well.  ``f_rows`` needs rows up to the
    fourth derivative; if fewer rows are passed the missing ones are
    completed by quintic-spline differentiation of the highest given row,
    which emits :class:`DerivativeQualityWarning` when ``nu < 1e-6``
    (spline noise is then amplified to the size of the viscous term).
    """
    lane = _lane(which)
    if not s.nu > 0.0:
        raise ValueError("viscous application requires nu > 0")
    if y is None:
        if mesh is None:
            raise ValueError("apply_operator_viscous needs either y or mesh")
        y = mesh.nodes
    y = np.asarray(y, dtype=float)
    f = np.asarray(f_rows, dtype=complex)
    if f.ndim != 2 or f.shape[0] < 3:
        raise ValueError("f_rows must hold at least (f, f', f'')")
    if f.shape[0] < 5:
        if len(y) < 6 or np.any(np.diff(y) <= 0):
            raise ValueError(
                "spline completion of derivative rows needs >= 6 increasing points"
            )
        if s.nu < 1e-6:
            warnings.warn(
                "derivative rows completed by spline differentiation at "
                f"nu = {s.nu:g}; the fourth-derivative noise floor may "
                "dominate the viscous term",
                DerivativeQualityWarning,
                stacklevel=2,
            )
        top = f.shape[0] - 1
        extra = [
            spline_derivative(y, f[top], k - top) for k in range(f.shape[0], 5)
        ]
        f = np.vstack([f, extra])
    alpha = s.alpha
    a2 = alpha * alpha
    U = p.u(y)
    if lane == ADJOINT:
        ray = (U - np.conj(s.c)) * (f[2] - a2 * f[0]) + 2.0 * p.u1(y) * f[1]
        visc_sign = 1.0
    else:
        ray = (U - s.c) * (f[2] - a2 * f[0]) - p.u2(y) * f[0]
        visc_sign = -1.0
    quartic = f[4] - 2.0 * a2 * f[2] + a2 * a2 * f[0]
    return ray + visc_sign * (s.nu / (1j * alpha)) * quartic


# ---------------------------------------------------------------------------
# Slow modes: regular expansion in nu
# ---------------------------------------------------------------------------


def _u_rows(p: ShearProfile, y: np.ndarray, kmax: int) -> Tuple[np.ndarray, str]:
    """Rows (U, U', ..., U^{(kmax)}); closed form when available."""
    rows = [np.asarray(p.derivative(k)(y), dtype=float) for k in range(min(kmax, 4) + 1)]
    method = "closed"
    if kmax > 4:
        if p.u_higher is not None:
            rows.extend(np.asarray(p.u_higher(k, y), dtype=float) for k in range(5, kmax + 1))
        else:
            method = "spline"
            grid = np.linspace(0.0, p.y_max, 2401)
            u4 = np.asarray(p.u4(grid), dtype=float)
            from scipy.interpolate import InterpolatedUnivariateSpline

            spl = InterpolatedUnivariateSpline(grid, u4, k=5)
            rows.extend(spl.derivative(k - 4)(y) for k in range(5, kmax + 1))
    return np.array(rows), method


def _recip_rows(g_rows: np.ndarray) -> np.ndarray:
    """Derivative rows of 1/g from those of g (Leibniz on g * (1/g) = 1)."""
    m = g_rows.shape[0] - 1
    H = [1.0 / g_rows[0]]
    for j in range(1, m + 1):
        acc = np.zeros_like(H[0])
        for i in range(j):
            acc = acc + comb(j, i) * g_rows[j - i] * H[i]
        H.append(-H[0] * acc)
    return np.array(H)


def _product_rows(x_rows: np.ndarray, y_rows: np.ndarray) -> np.ndarray:
    """Derivative rows of x*y from rows of the factors (Leibniz)."""
    m = min(x_rows.shape[0], y_rows.shape[0]) - 1
    out = []
    for j in range(m + 1):
        acc = np.zeros(x_rows.shape[1], dtype=complex)
        for i in range(j + 1):
            acc = acc + comb(j, i) * x_rows[i] * y_rows[j - i]
        out.append(acc)
    return np.array(out)


def _ode_ladder(
    p: ShearProfile,
    s: SpectralParams,
    lane: str,
    y: np.ndarray,
    psi: np.ndarray,
    dpsi: np.ndarray,
    f_rows: np.ndarray,
) -> Tuple[np.ndarray, str]:
    """Rows (psi, psi', ..., psi^{(mf+2)}) from the second-order equation.

    The lane's equation in explicit form is ``psi'' = A psi + B psi' + F``
    with ``A = alpha^2 (+ U''/g original)``, ``B = -2U'/g (adjoint)`` and
    ``F = f/g``; differentiating it j times (Leibniz) ladders the rows up
    without any numerical differentiation.
    """
    mf = f_rows.shape[0] - 1
    m = mf + 2
    a2 = s.alpha**2
    cc = _c_lane(s, lane)
    u_rows, method = _u_rows(p, y, m)
    g_rows = np.array(u_rows, dtype=complex)
    g_rows[0] = g_rows[0] - cc
    h_rows = _recip_rows(g_rows[: m - 1]) if m >= 2 else _recip_rows(g_rows[:1])
    n = len(y)
    zeros = np.zeros((m - 1, n), dtype=complex)
    if lane == ADJOINT:
        a_rows = zeros.copy()
        a_rows[0] = a2
        b_rows = -2.0 * _product_rows(u_rows[1:m], h_rows)
    else:
        a_rows = _product_rows(u_rows[2 : m + 1], h_rows)
        a_rows[0] = a_rows[0] + a2
        b_rows = zeros
    F_rows = _product_rows(np.asarray(f_rows, dtype=complex), h_rows)
    D = [np.asarray(psi, dtype=complex), np.asarray(dpsi, dtype=complex)]
    for j in range(m - 1):
        acc = np.array(F_rows[j], dtype=complex, copy=True)
        for i in range(j + 1):
            acc += comb(j, i) * (a_rows[j - i] * D[i] + b_rows[j - i] * D[i + 1])
        D.append(acc)
    return np.array(D), method


def _delta2_coeffs(p: ShearProfile, s_free: SpectralParams, lane: str, y):
    """(P, Q) with ``D2a^2 psi = P psi + Q psi'`` for inviscid solutions.

    A homogeneous inviscid solution's second derivative is
    ``psi'' = A psi + B psi'`` (adjoint: A = alpha^2, B = -2U'/g;
    original: A = alpha^2 + U''/g, B = 0), so its biharmonic image
    closes over (psi, psi') with profile-derivative coefficients.
    """
    y = np.asarray(y, dtype=float)
    a2 = s_free.alpha**2
    cc = _c_lane(s_free, lane)
    g = p.u(y) - cc
    u1 = p.u1(y)
    u2 = p.u2(y)
    u3 = p.u3(y)
    if lane == ADJOINT:
        B = -2.0 * u1 / g
        Bp = -2.0 * u2 / g + 2.0 * u1**2 / g**2
        Bpp = -2.0 * u3 / g + 6.0 * u1 * u2 / g**2 - 4.0 * u1**3 / g**3
        P = a2 * (2.0 * Bp + B**2)
        Q = Bpp + 3.0 * B * Bp + B**3
    else:
        u4 = p.u4(y)
        T = u2 / g
        Ap = u3 / g - u2 * u1 / g**2
        App = u4 / g - 2.0 * u3 * u1 / g**2 - u2**2 / g**2 + 2.0 * u2 * u1**2 / g**3
        P = T**2 + App
        Q = 2.0 * Ap
    return P, Q


class _SlowTerm:
    """One nu-free term of the slow expansion, with ladder evaluators.

    ``eval_fn(y) -> (psi, psi')`` is the piecewise (dense) evaluator of
    the term; all higher derivative rows come from the equation ladder,
    with the forcing rows generated recursively from the previous term.
    """

    def __init__(self, p, s_free, lane, sign, eval_fn, prev=None, diag=None):
        self.p = p
        self.s = s_free
        self.lane = lane
        self.sign = sign
        self.eval_fn = eval_fn
        self.prev = prev
        self.diag = dict(diag or {})
        self._node_cache = {}

    def forcing_rows(self, y: np.ndarray, mf: int) -> np.ndarray:
        if self.prev is None:
            return np.zeros((mf + 1, len(y)), dtype=complex)
        pr = self.prev.rows(y, mf + 4)
        a = self.s.alpha
        fac = (-1.0 if self.lane == ADJOINT else 1.0) / (1j * a)
        return fac * (pr[4 : 5 + mf] - 2.0 * a * a * pr[2 : 3 + mf] + a**4 * pr[0 : 1 + mf])

    def forcing(self, y: np.ndarray) -> np.ndarray:
        return self.forcing_rows(y, 0)[0]

    def rows(self, y, m: int) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        psi, dpsi = self.eval_fn(y)
        if m == 0:
            return np.array([psi])
        if m == 1:
            return np.array([psi, dpsi])
        f_rows = self.forcing_rows(y, m - 2)
        rows, method = _ode_ladder(self.p, self.s, self.lane, y, psi, dpsi, f_rows)
        self.diag.setdefault("u_derivative_method", method)
        return rows

    def node_rows(self, mesh: Mesh, m: int) -> np.ndarray:
        key = id(mesh)
        cached = self._node_cache.get(key)
        if cached is None or cached.shape[0] < m + 1:
            cached = self.rows(mesh.nodes, m)
            self._node_cache[key] = cached
        return cached[: m + 1]


def _seed_kink_split(kernel, f_fn, vals, targets, conv, conv_s):
    """Re-integrate the kernel cell containing each off-node target.

    Mirrors the kernel-operator kink handling, but the integrand samples
    come from the closure ``f_fn`` (exact), not from resampling.
    """
    a, b = kernel.nodes[:-1], kernel.nodes[1:]
    alpha = kernel.alpha
    eps = 1e-12
    targets = np.atleast_1d(targets)
    cell_of = np.clip(np.searchsorted(kernel.nodes, targets) - 1, 0, len(a) - 1)
    conv = np.array(conv, dtype=complex, copy=True)
    conv_s = np.array(conv_s, dtype=complex, copy=True)
    for i, t in enumerate(targets):
        j = int(cell_of[i])
        if t <= a[j] + eps or t >= b[j] - eps:
            continue
        sl = slice(12 * j, 12 * (j + 1))
        e_old = np.exp(-alpha * np.abs(t - kernel.qx[sl]))
        sgn_old = -np.sign(t - kernel.qx[sl])
        conv[i] -= np.sum(e_old * vals[sl])
        conv_s[i] -= np.sum(sgn_old * e_old * vals[sl])
        for side, (lo, hi) in enumerate(((a[j], t), (t, b[j]))):
            half = 0.5 * (hi - lo)
            x_sub = 0.5 * (hi + lo) + half * kernel._glx
            v_sub = f_fn(x_sub) * (half * kernel._glw)
            e_new = np.exp(-alpha * np.abs(t - x_sub))
            conv[i] += np.sum(e_new * v_sub)
            conv_s[i] += (1.0 if side else -1.0) * np.sum(e_new * v_sub)
    return conv, conv_s


def _solve_slow_term(p, s_free, lane, sign, mesh, prev):
    """Particular solution of (lane operator) psi = forcing(prev).

    Tail: the free-space kernel seed inverts ``D2a`` exactly on
    ``(ybar, y_max)``; the fixed point ``psi = psi0 - T psi`` then solves
    the full second-order equation there (the kernel's delta reproduces
    the curvature term).  Head: the equation is integrated wall-ward in
    the rescaled variable ``w = psi e^{-sign*alpha*y}`` with the forcing
    carried along.  Failure to contract reports the tail start actually
    used, and larger ybar values are retried before giving up.
    """
    alpha = s_free.alpha
    cc = _c_lane(s_free, lane)
    y_max = p.y_max

    def f_fn(x):
        return prev.forcing(np.asarray(x, dtype=float))

    if lane == ADJOINT:
        f_tilde = f_fn
    else:

        def f_tilde(x):
            x = np.asarray(x, dtype=float)
            return f_fn(x) / (p.u(x) - s_free.c)

    if sign < 0:
        candidates = list(np.arange(8.0, y_max - 3.9, 2.0)) or [y_max / 2.0]
    else:
        start = min(12.0, y_max - 2.0, max(1.0, 5.75 / alpha))
        candidates = [start + k for k in range(7) if start + k <= y_max - 2.0]

    last_err: Optional[Exception] = None
    solved = None
    for ybar in candidates:
        try:
            solved = _slow_tail_fixed_point(p, s_free, lane, sign, mesh, ybar, f_tilde)
            break
        except (RuntimeError, ValueError) as err:
            last_err = err
    if solved is None:
        raise RuntimeError(f"slow-term tail construction failed: {last_err}")
    kernel, vals0, tilde, psi_tail, dpsi_tail, tail_diag = solved
    y_n = float(kernel.nodes[0])

    # Head: wall-ward forced integration in the rescaled variable.
    i0 = int(np.searchsorted(mesh.nodes, y_n - 1e-12))
    head_nodes = mesh.nodes[: i0 + 1]
    sg = sign * alpha
    rhs = rayleigh._w_system(p, s_free, lane, sign)

    def forcing_vec(yv):
        f_val = complex(f_fn(np.array([yv]))[0])
        h_val = 1.0 / (complex(p.u(yv)) - cc)
        return np.array([0.0, f_val * h_val * np.exp(-sg * yv)], dtype=complex)

    scale_m = np.exp(-sg * y_n)
    init = np.array(
        [psi_tail[0] * scale_m, (dpsi_tail[0] - sg * psi_tail[0]) * scale_m],
        dtype=complex,
    )
    traj = integrate_system(
        rhs, (y_n, 0.0), init, 1e-12, t_eval=head_nodes, forcing=forcing_vec
    )

    def tail_eval(yq):
        yq = np.atleast_1d(np.asarray(yq, dtype=float))
        conv = exp_abs_convolve(alpha, yq, kernel.qx, vals0)
        conv_s = exp_abs_convolve_d(alpha, yq, kernel.qx, vals0)
        conv, conv_s = _seed_kink_split(kernel, f_tilde, vals0, yq, conv, conv_s)
        pre, pre_d = kernel._prefactor(yq)
        seed_v = -pre * conv / (2.0 * alpha)
        seed_d = -(pre_d * conv + pre * alpha * conv_s) / (2.0 * alpha)
        t_v, t_d = kernel.apply_with_derivative(tilde, targets=yq)
        return seed_v - t_v, seed_d - t_d

    def evaluator(yq):
        yq = np.atleast_1d(np.asarray(yq, dtype=float))
        psi = np.empty(len(yq), dtype=complex)
        dpsi = np.empty(len(yq), dtype=complex)
        low = yq <= y_n + 1e-12
        if np.any(low):
            w = traj(yq[low])
            e = np.exp(sg * yq[low])
            psi[low] = w[0] * e
            dpsi[low] = (w[1] + sg * w[0]) * e
        if np.any(~low):
            psi[~low], dpsi[~low] = tail_eval(yq[~low])
        return psi, dpsi

    diag = dict(tail_diag)
    diag["y_n"] = y_n
    return _SlowTerm(p, s_free, lane, sign, evaluator, prev=prev, diag=diag)


def _slow_tail_fixed_point(p, s_free, lane, sign, mesh, ybar, f_tilde):
    kernel = rayleigh._TailKernel(p, s_free, ybar, lane, mesh, sign, refine=4)
    alpha = kernel.alpha
    y_n = float(kernel.nodes[0])
    vals0 = np.asarray(f_tilde(kernel.qx), dtype=complex) * kernel.qw
    conv = exp_abs_convolve(alpha, kernel.nodes, kernel.qx, vals0)
    conv_s = exp_abs_convolve_d(alpha, kernel.nodes, kernel.qx, vals0)
    seed = -kernel.pre * conv / (2.0 * alpha)
    seed_d = -(kernel.pre_d * conv + kernel.pre * alpha * conv_s) / (2.0 * alpha)
    descale = np.exp(-sign * s_free.alpha * kernel.nodes)
    seed_tilde = seed * descale
    tilde = seed_tilde.copy()
    prev_inc = None
    ratio = 0.0
    converged = False
    for it in range(80):
        new = seed_tilde - kernel.apply(tilde) * descale
        inc = float(np.max(np.abs(new - tilde)))
        scale = float(np.max(np.abs(new))) or 1.0
        tilde = new
        if inc <= 1e-14 * scale:
            converged = True
            break
        if prev_inc is not None and prev_inc > 0.0:
            ratio = inc / prev_inc
        prev_inc = inc
    if not converged:
        raise RuntimeError(
            f"slow-term tail did not contract (ratio {ratio:.3f}) "
            f"with tail start y_n = {y_n:g}"
        )
    if ratio >= 0.6:
        raise RuntimeError(
            f"slow-term tail contraction too weak (ratio {ratio:.3f}) "
            f"with tail start y_n = {y_n:g}"
        )
    t_v, t_d = kernel.apply_with_derivative(tilde)
    psi_tail = seed - t_v
    dpsi_tail = seed_d - t_d
    return kernel, vals0, tilde, psi_tail, dpsi_tail, {
        "contraction_ratio": ratio,
        "iterations": it + 1,
    }


_SLOW_CACHE: dict = {}
_SLOW_LOCK = threading.Lock()


def clear_cache():
    with _SLOW_LOCK:
        _SLOW_CACHE.clear()


def _slow_cache_key(p, s_free, lane, sign, mesh):
    return (
        id(p),
        p.name,
        round(s_free.alpha, 15),
        complex(s_free.c),
        lane,
        sign,
        mesh.n,
        float(mesh.nodes[1]),
        float(mesh.nodes[-1]),
    )


def _slow_terms(p, s, lane, sign, mesh, n_terms):
    """nu-free expansion terms 0..n_terms, cached per (profile, alpha, c)."""
    s_free = SpectralParams(s.alpha, s.c, 0.0, s.gamma)
    key = _slow_cache_key(p, s_free, lane, sign, mesh)
    entry = _SLOW_CACHE.get(key)
    if entry is None or len(entry) < n_terms + 1:
        with _SLOW_LOCK:
            entry = _SLOW_CACHE.get(key, ())
            terms = list(entry)
            while len(terms) < n_terms + 1:
                if not terms:
                    kind = DECAYING if sign < 0 else GROWING
                    fs = fundamental_solution(p, s_free, kind, lane, mesh=mesh)
                    ev = fs.diagnostics["piecewise_eval"]
                    terms.append(
                        _SlowTerm(p, s_free, lane, sign, ev, prev=None,
                                  diag={"kind": kind})
                    )
                else:
                    terms.append(
                        _solve_slow_term(p, s_free, lane, sign, mesh, terms[-1])
                    )
            entry = tuple(terms)
            _SLOW_CACHE[key] = entry
    return entry[: n_terms + 1]


@dataclass(frozen=True)
class SlowExpansion:
    """Slow (regular-in-nu) mode expansion ``sum_k nu^k psi_k``.

    ``terms[k]`` holds the derivative rows (psi, ..., psi'''') of the
    k-th term *including* its ``nu^k`` scaling, at the mesh nodes.  Term
    0 is the inviscid fundamental solution of the lane; term k solves the
    lane's second-order equation with ``-/+ (1/(i alpha)) D2a^2`` of term
    k-1 as forcing (minus adjoint, plus original), so the viscous
    operator applied to the partial sum telescopes to the biharmonic
    image of the last term.
    """

    profile: ShearProfile
    params: SpectralParams
    operator: str
    sign: int
    order: int
    mesh: Mesh
    terms: tuple
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)
    _terms_obj: tuple = field(default=(), repr=False, compare=False)

    def total(self) -> np.ndarray:
        out = np.zeros_like(self.terms[0])
        for t in self.terms:
            out = out + t
        return out

    def rows_at(self, y, orders: int = 4) -> np.ndarray:
        """Rows of the summed expansion at arbitrary points."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.zeros((orders + 1, len(y)), dtype=complex)
        for k, term in enumerate(self._terms_obj):
            out += self.params.nu**k * term.rows(y, orders)
        return out


def slow_mode_expansion(
    p: ShearProfile,
    s: SpectralParams,
    N: int,
    sign,
    operator: str = ORR_STAR,
    mesh: Optional[Mesh] = None,
) -> SlowExpansion:
    """Slow-mode expansion of order ``N`` for one asymptotic branch.

    The nu-free terms are cached per (profile, alpha, c, lane, sign,
    mesh), so sweeping ``nu`` at fixed phase speed re-scales cached
    ladders instead of re-solving.  The default mesh is the nu-free
    production mesh: the terms are viscosity-independent and need no
    boundary-layer grading.

    Raises ``RuntimeError`` when the tail fixed point fails to contract
    (the message reports the tail start ``y_n`` actually used).
    """
    lane = _lane(operator)
    N = int(N)
    if N < 0:
        raise ValueError("expansion order must be >= 0")
    _require_viscous(s)
    sb = int(_branch_sign(sign))
    mesh = mesh or default_mesh(p.y_max, 0.0, s.alpha)
    terms_obj = _slow_terms(p, s, lane, sb, mesh, N)
    terms = tuple(
        s.nu**k * term.node_rows(mesh, 4) for k, term in enumerate(terms_obj)
    )
    total = np.zeros_like(terms[0])
    for t in terms:
        total = total + t
    # Residual identity: the viscous operator applied to the partial sum
    # equals the biharmonic image of the last term (telescoping).
    resid = apply_operator_viscous(p, s, lane, total, y=mesh.nodes)
    a2 = s.alpha**2
    last = terms[-1]
    quartic = last[4] - 2.0 * a2 * last[2] + a2 * a2 * last[0]
    visc_sign = 1.0 if lane == ADJOINT else -1.0
    expected = visc_sign * (s.nu / (1j * s.alpha)) * quartic
    defect = float(np.max(np.abs(resid - expected)))
    scale = float(np.max(np.abs(total[0]))) or 1.0
    diagnostics = {
        "residual_identity_sup": defect,
        "residual_identity_rel": defect / scale,
        "term_norms": tuple(float(np.max(np.abs(t[0]))) for t in terms),
        "tail_starts": tuple(t.diag.get("y_n") for t in terms_obj),
        "u_derivative_method": terms_obj[-1].diag.get("u_derivative_method", "closed"),
    }
    return SlowExpansion(
        profile=p,
        params=s,
        operator=lane,
        sign=sb,
        order=N,
        mesh=mesh,
        terms=terms,
        diagnostics=diagnostics,
        _terms_obj=tuple(terms_obj),
    )


# ---------------------------------------------------------------------------
# Evans determinants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvansSample:
    """One evaluation of the 2x2 viscous boundary determinant.

    ``matrix_entries`` is the determinant-bearing 2x2: for the expansion
    route the first row holds the wall traces (phi_slow(0), phi_fast(0))
    and the second the Navier boundary forms phi'(0) - nu^gamma phi''(0);
    for the compound route the first row holds the two boundary minors
    and the second the Navier weights (nu^gamma, 1).  ``value`` is its
    determinant; ``regularized`` divides the expansion determinant by the
    fast mode's Navier form (the compound route has no such split and
    reports the raw value there).
    """

    params: SpectralParams
    operator: str
    value: complex
    matrix_entries: np.ndarray
    regularized: complex
    method: str = "expansion"
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)


def _navier_form(rows0, s: SpectralParams) -> complex:
    """phi'(0) - nu^gamma phi''(0) from wall rows (phi, phi', phi'')."""
    return complex(rows0[1] - s.nu**s.gamma * rows0[2])


def _decaying_slow_rows(p, s, lane, mesh, correct):
    """Rows of the decaying slow solution, optionally Green-corrected.

    Order-1 expansion; when its pointwise operator residual exceeds
    ``1e-6`` of the solution scale and ``correct`` is set, up to three
    approximate-Green correction passes are applied (lazy import: the
    correction lives in the viscous-Green module).
    """
    expn = slow_mode_expansion(p, s, 1, -1, lane, mesh)
    rows = expn.total()
    scale = float(np.max(np.abs(rows[0]))) or 1.0
    resid = apply_operator_viscous(p, s, lane, rows, y=mesh.nodes)
    sup = float(np.max(np.abs(resid)))
    diag = {
        "slow_residual_sup": sup,
        "slow_scale": scale,
        "correction_terms": 0,
        "slow_expansion": expn,
    }
    if correct and sup > 1e-6 * scale:
        from .viscgreen import correct_decaying_rows

        rows, used, new_sup = correct_decaying_rows(p, s, lane, rows, mesh, max_terms=3)
        diag["correction_terms"] = used
        diag["slow_residual_sup_corrected"] = new_sup
    return rows, diag


def evans(
    p: ShearProfile,
    s: SpectralParams,
    operator: str = ORR_STAR,
    mesh: Optional[Mesh] = None,
    correct: bool = True,
) -> EvansSample:
    """Expansion-route Evans determinant under the Navier condition.

    Columns: the decaying slow mode (order-1 expansion, optionally
    Green-corrected) and the decaying fast mode (order-1 phase
    expansion, unit wall normalization).  ``value`` is the raw 2x2
    determinant, ``regularized`` divides by the fast column's Navier
    form, which tends to the slow wall trace as ``nu -> 0`` and is the
    quantity the eigenvalue tracker root-finds on.

    Raises ``ValueError`` when the fast Navier form falls below 1e-14
    (the regularization would blow up; happens only for contrived
    gamma/nu combinations).
    """
    lane = _lane(operator)
    _require_viscous(s)
    mesh = mesh or default_mesh(p.y_max, 0.0, s.alpha)
    slow_rows, slow_diag = _decaying_slow_rows(p, s, lane, mesh, correct)
    fast = wkb_fast_mode(p, s, 1, -1, lane, mesh)
    slow_wall = slow_rows[:3, 0]
    fast_wall = fast.values[:3, 0]
    nav_slow = _navier_form(slow_wall, s)
    nav_fast = _navier_form(fast_wall, s)
    if abs(nav_fast) < 1e-14:
        raise ValueError(
            "fast-mode Navier form below 1e-14; determinant not regularizable"
        )
    entries = np.array(
        [[slow_wall[0], fast_wall[0]], [nav_slow, nav_fast]], dtype=complex
    )
    value = complex(entries[0, 0] * entries[1, 1] - entries[0, 1] * entries[1, 0])
    diagnostics = dict(slow_diag)
    diagnostics["fast_residual_sup"] = fast.diagnostics["residual_sup"]
    return EvansSample(
        params=s,
        operator=lane,
        value=value,
        matrix_entries=entries,
        regularized=value / nav_fast,
        method="expansion",
        diagnostics=diagnostics,
    )


def _compound_minors_generic(p, s, lane, c_gauge, tol):
    """Python fallback of the minor integration for custom profiles."""
    alpha = s.alpha
    nu = s.nu
    cc = _c_lane(s, lane)
    cc_gauge = complex(np.conj(c_gauge)) if lane == ADJOINT else complex(c_gauge)
    pm = -1j if lane == ADJOINT else 1j

    def rhs(y):
        u = complex(p.u(y))
        u1 = complex(p.u1(y))
        u2 = complex(p.u2(y))
        g = u - cc
        ia_nu = 1j * alpha / nu
        a2sq = alpha * alpha
        if lane == ADJOINT:
            a0 = ia_nu * g * a2sq - a2sq * a2sq
            a1 = -2.0 * ia_nu * u1
            a2 = -ia_nu * g + 2.0 * a2sq
        else:
            a0 = -ia_nu * (g * a2sq + u2) - a2sq * a2sq
            a1 = 0.0 + 0.0j
            a2 = ia_nu * g + 2.0 * a2sq
        mu = np.sqrt((a2sq * nu + pm * alpha * (u - cc_gauge)) / nu)
        d = alpha + mu.real
        A = np.array(
            [
                [d, 1.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, d, 1.0, 1.0, 0.0, 0.0],
                [a1, a2, d, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, d, 1.0, 0.0],
                [-a0, 0.0, 0.0, a2, d, 1.0],
                [0.0, -a0, 0.0, -a1, 0.0, d],
            ],
            dtype=complex,
        )
        return A

    g0 = complex(p.u(p.y_max)) - cc
    mu0 = np.sqrt((alpha * alpha * nu + pm * alpha * g0) / nu)
    seed = np.array(
        [
            1.0,
            -(alpha + mu0),
            alpha * alpha + alpha * mu0 + mu0 * mu0,
            alpha * mu0,
            -alpha * mu0 * (alpha + mu0),
            alpha * alpha * mu0 * mu0,
        ],
        dtype=complex,
    )
    traj = integrate_system(rhs, (p.y_max, 0.0), seed, tol, t_eval=np.array([0.0]))
    return traj.y[:, 0], None


def evans_exact(
    p: ShearProfile,
    s: SpectralParams,
    operator: str = ORR_STAR,
    tol: float = 1e-10,
    c_gauge: Optional[complex] = None,
) -> EvansSample:
    """Exact Evans determinant by compound-matrix (minor) shooting.

    Integrates the six 2x2 minors of the decaying solution pair from
    ``y_max`` to the wall in a drift-compensated gauge and evaluates
    ``w12(0) - nu^gamma w13(0)``, which vanishes exactly at viscous
    eigenvalues.  ``c_gauge`` freezes the (non-holomorphic) drift
    exponent at a reference phase speed so the returned value is
    holomorphic/antiholomorphic in ``c`` for Newton refinement; the
    default uses ``c`` itself.  Closed-form profile families run on the
    compiled kernel; other profiles fall back to the generic integrator.
    """
    lane = _lane(operator)
    _require_viscous(s)
    if c_gauge is None:
        c_gauge = s.c
    code = _kernels.PROFILE_CODES.get(p.name)
    if code is not None:
        w, n_steps = _kernels.compound_minors(
            code,
            np.array([p.u_inf]),
            s.alpha,
            complex(s.c),
            s.nu,
            lane == ADJOINT,
            p.y_max,
            tol,
            c_gauge=complex(c_gauge),
        )
        method = "compound-compiled" if _kernels.HAS_NUMBA else "compound-python"
    else:
        w, n_steps = _compound_minors_generic(p, s, lane, c_gauge, tol)
        method = "compound-generic"
    ng = s.nu**s.gamma
    entries = np.array([[w[0], w[1]], [ng, 1.0]], dtype=complex)
    value = complex(w[0] - ng * w[1])
    return EvansSample(
        params=s,
        operator=lane,
        value=value,
        matrix_entries=entries,
        regularized=value,
        method=method,
        diagnostics={"minors_wall": w, "n_steps": n_steps, "c_gauge": complex(c_gauge)},
    )


# ---------------------------------------------------------------------------
# Wall-response quotient
# ---------------------------------------------------------------------------


def o_gamma(
    p: ShearProfile,
    s: SpectralParams,
    nu: Optional[float] = None,
    gamma: Optional[float] = None,
    operator: str = ORR_STAR,
    mesh: Optional[Mesh] = None,
    correct: bool = True,
) -> complex:
    """Navier-form quotient of the slow mode against the fast mode.

    ``O = Nav(slow)(0) / Nav(fast)(0)``, the definitional decomposition
    of the regularized determinant: ``E-reg = phi_slow(0) - O`` when the
    fast mode is wall-normalized.  The fast denominator is the closed
    form ``-mu*(0) (1 + nu^gamma mu*(0))``: the wall-normalized fast mode
    has ``phi'(0) = theta'(0)/sqrt(nu) = -mu*(0)`` and
    ``phi''(0) = mu*(0)^2`` at leading order, and using the closed form
    keeps the quotient's small-nu scaling free of expansion noise.

    ``nu``/``gamma`` override the corresponding fields of ``s`` (callers
    typically hold the phase speed fixed at the inviscid eigenvalue and
    sweep ``nu``).
    """
    lane = _lane(operator)
    nu = s.nu if nu is None else float(nu)
    gamma = s.gamma if gamma is None else float(gamma)
    s_eff = SpectralParams(s.alpha, s.c, nu, gamma)
    _require_viscous(s_eff)
    mesh = mesh or default_mesh(p.y_max, 0.0, s.alpha)
    rows, _ = _decaying_slow_rows(p, s_eff, lane, mesh, correct)
    num = _navier_form(rows[:3, 0], s_eff)
    mu0 = complex(_mu_values(p, s_eff, lane, np.array([0.0]))[0])
    den = -mu0 * (1.0 + nu**gamma * mu0)
    if abs(den) < 1e-14:
        raise ValueError("fast-mode Navier form below 1e-14; quotient undefined")
    return num / den


# ---------------------------------------------------------------------------
# Eigenvalue tracking in viscosity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenvalueTrack:
    """Continuation of an inviscid eigenvalue down a viscosity grid.

    ``samples`` holds (nu, c_nu, |E_exact at c_nu|) for each converged
    grid point (the modulus is reported in the compound route's drift
    gauge).  ``fitted_rate``/``fitted_prefactor`` come from the least
    squares fit of ``log|c_nu - c0|`` against ``log nu``.
    ``winding_counts[i]`` is the number of zeros of the regularized
    expansion determinant inside the verification circle around ``c0``
    at ``nu_values[i]`` (-1 when the count could not be obtained).
    """

    alpha: float
    c0: complex
    gamma: float
    operator: str
    kappa: int
    nu_values: np.ndarray
    samples: tuple
    fitted_rate: float
    fitted_prefactor: float
    monotone: bool
    winding_counts: tuple
    flags: tuple
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)


def _newton_with_relief(f, seed, tol, max_iter=50):
    """Newton, retrying with loosened tolerance when the floor is noisy."""
    for fac in (1.0, 30.0, 900.0):
        try:
            return newton_root(f, seed, tol * fac, max_iter=max_iter)
        except RuntimeError as err:
            last = err
    raise last


def track_eigenvalues(
    p: ShearProfile,
    alpha: float,
    c0: complex,
    nu_grid: Optional[Sequence[float]] = None,
    gamma: float = 10.0,
    which: str = ORR_STAR,
    kappa: Optional[int] = None,
    mesh: Optional[Mesh] = None,
    refine_exact: bool = True,
    verify_winding: bool = True,
) -> EigenvalueTrack:
    """Continue the inviscid eigenvalue ``c0`` down a viscosity grid.

    Per grid point (decreasing ``nu``): Newton on the regularized
    expansion determinant, seeded with ``c0 + O_gamma(nu)^{1/kappa}`` at
    the first point and with the previous root afterwards (the adjoint
    lane is antiholomorphic in ``c``, so its iteration runs on the
    conjugated variable); then an optional polish on the exact compound
    determinant with the drift gauge frozen at the stage-1 root; then a
    winding count of the expansion determinant on a circle around ``c0``
    whose radius is 1.5x the gap, capped to keep the circle inside the
    domain where the fast exponent and the critical layer are
    controlled.  Failures are recorded in ``flags``; three consecutive
    failures truncate the track.

    ``kappa`` defaults to the inviscid root multiplicity measured by
    ``rayleigh.estimate_kappa``.
    """
    lane = _lane(which)
    alpha = float(alpha)
    c0 = complex(c0)
    if nu_grid is None:
        nu_grid = np.geomspace(1e-2, 1e-6, 17)
    nu_values = np.sort(np.asarray(nu_grid, dtype=float))[::-1]
    mesh = mesh or default_mesh(p.y_max, 0.0, alpha)

    diag: dict = {}
    if kappa is None:
        est = rayleigh.estimate_kappa(p, alpha, c0)
        kappa = int(est.kappa)
        diag["kappa_estimate"] = est
    kappa = int(kappa)
    if kappa < 1:
        raise ValueError("kappa must be a positive integer")

    anti = lane == ADJOINT
    samples = []
    winding_counts = []
    flags = []
    o_values = []
    c_prev: Optional[complex] = None
    consec_fail = 0

    for nu in nu_values:
        s_nu = SpectralParams(alpha, c0, nu, gamma)
        try:
            o_val = o_gamma(p, s_nu, operator=lane, mesh=mesh, correct=False)
            o_values.append((float(nu), complex(o_val)))
            seed = c_prev if c_prev is not None else c0 + o_val ** (1.0 / kappa)

            def f_reg(c):
                sc = SpectralParams(alpha, complex(c), nu, gamma)
                return evans(p, sc, operator=lane, mesh=mesh, correct=False).regularized

            target = (lambda d: f_reg(np.conj(d))) if anti else f_reg
            seed_t = np.conj(seed) if anti else seed
            scale1 = abs(f_reg(c0)) or 1.0
            root = _newton_with_relief(target, seed_t, 1e-10 * scale1)
            c_nu = complex(np.conj(root)) if anti else complex(root)

            abs_exact = np.nan
            if refine_exact:
                gauge = c_nu

                def f_exact(c):
                    sc = SpectralParams(alpha, complex(c), nu, gamma)
                    return evans_exact(p, sc, operator=lane, c_gauge=gauge).value

                gap_est = max(abs(c_nu - c0), 1e-9)
                h = 1e-3 * gap_est
                dfd = (f_exact(c_nu + h) - f_exact(c_nu - h)) / (2.0 * h)
                tol2 = max(abs(dfd) * gap_est * 1e-7, 1e-300)
                try:
                    target2 = (lambda d: f_exact(np.conj(d))) if anti else f_exact
                    seed2 = np.conj(c_nu) if anti else c_nu
                    root2 = _newton_with_relief(target2, seed2, tol2, max_iter=30)
                    c_ref = complex(np.conj(root2)) if anti else complex(root2)
                    if abs(c_ref - c_nu) < 0.5 * gap_est:
                        c_nu = c_ref
                    else:
                        flags.append(f"exact-refine-rejected@nu={nu:g}")
                    abs_exact = abs(f_exact(c_nu))
                except RuntimeError:
                    flags.append(f"exact-refine-failed@nu={nu:g}")
                    abs_exact = abs(f_exact(c_nu))

            gap = abs(c_nu - c0)
            count = -1
            if verify_winding and gap > 0.0:
                radius = min(1.5 * gap, 0.6 * (alpha * nu + c0.imag))
                if radius < 1.05 * gap:
                    flags.append(f"winding-radius-tight@nu={nu:g}")
                if radius > 0.0:
                    try:
                        count = abs(
                            winding_number(
                                f_reg, Contour(c0, radius, 64)
                            )
                        )
                    except (ValueError, RuntimeError) as err:
                        flags.append(f"winding-failed@nu={nu:g}: {err}")
                if count >= 0 and count != kappa:
                    flags.append(
                        f"winding-mismatch@nu={nu:g}: counted {count}, expected {kappa}"
                    )
            winding_counts.append(int(count))
            samples.append((float(nu), c_nu, float(abs_exact)))
            c_prev = c_nu
            consec_fail = 0
        except (RuntimeError, ValueError) as err:
            flags.append(f"newton-failed@nu={nu:g}: {err}")
            winding_counts.append(-1)
            consec_fail += 1
            if consec_fail >= 3:
                flags.append(f"track-truncated@nu={nu:g}")
                break

    gaps = np.array([abs(c - c0) for _, c, _ in samples])
    nus = np.array([nu for nu, _, _ in samples])
    if len(samples) >= 2 and np.all(gaps > 0.0):
        coeffs = np.polyfit(np.log(nus), np.log(gaps), 1)
        fitted_rate = float(coeffs[0])
        fitted_prefactor = float(np.exp(coeffs[1]))
    else:
        fitted_rate = float("nan")
        fitted_prefactor = float("nan")
        if len(samples) < 2:
            flags.append("fit-skipped: fewer than two samples")
    monotone = bool(len(gaps) >= 2 and np.all(np.diff(gaps) < 0.0))

    diag["o_values"] = tuple(o_values)
    diag["gaps"] = tuple(float(g) for g in gaps)
    return EigenvalueTrack(
        alpha=alpha,
        c0=c0,
        gamma=float(gamma),
        operator=lane,
        kappa=kappa,
        nu_values=nus,
        samples=tuple(samples),
        fitted_rate=fitted_rate,
        fitted_prefactor=fitted_prefactor,
        monotone=monotone,
        winding_counts=tuple(winding_counts[: len(samples)]),
        flags=tuple(flags),
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def _emit(dest, lines):
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)


def export_track_csv(track: EigenvalueTrack, dest) -> None:
    """Write one line per tracked viscosity:
    ``nu, Re c_nu, Im c_nu, |c_nu - c0|, |E|, winding count``."""
    lines = ["nu,re_c,im_c,abs_gap,evans_abs,kappa_check"]
    for (nu, c, abs_e), count in zip(track.samples, track.winding_counts):
        gap = abs(c - track.c0)
        nums = ",".join(
            f"{v:.17g}" for v in (nu, c.real, c.imag, gap, abs_e)
        )
        lines.append(f"{nums},{count:d}")
    _emit(dest, lines)


def export_scan_csv(c_values: np.ndarray, e_values: np.ndarray, dest) -> None:
    """Write one line per determinant sample:
    ``Re c, Im c, Re E, Im E, |E|``."""
    c_values = np.asarray(c_values).ravel()
    e_values = np.asarray(e_values).ravel()
    if c_values.shape != e_values.shape:
        raise ValueError("c_values and e_values must have matching shapes")
    lines = ["re_c,im_c,re_e,im_e,abs_e"]
    for c, e in zip(c_values, e_values):
        lines.append(
            ",".join(
                f"{v:.17g}"
                for v in (c.real, c.imag, e.real, e.imag, abs(e))
            )
        )
    _emit(dest, lines)
