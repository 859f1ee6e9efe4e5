"""Inviscid layer: the second-order stability operator and its adjoint.

Operators (with ``D2a = d^2/dy^2 - alpha^2``):

* original:  ``L_c   phi = (U - c) * D2a phi - U'' phi``
* adjoint:   ``L*_c  phi = (U - conj(c)) * D2a phi + 2 U' phi'``

This module provides their decaying/growing fundamental solutions (by a
resolvent-kernel fixed point on the tail and well-conditioned rescaled
integration), Wronskians, the interior / Dirichlet / initial-value Green
functions, eigenvalue location by argument principle + Newton on the
boundary trace, the vanishing order ``kappa`` of the trace at an
eigenvalue, and image-membership pairings.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from ._kernels import exp_abs_convolve, exp_abs_convolve_d
from .odecore import (
    CellQuadrature,
    Contour,
    Mesh,
    default_mesh,
    integrate_system,
    newton_root,
    resample_to,
    winding_number,
)
from .profiles import ShearProfile, SpectralParams

__all__ = [
    "FundamentalSolution",
    "WronskianReport",
    "InviscidGreen",
    "KappaEstimate",
    "EigenvalueResult",
    "t_operator_apply",
    "fundamental_solution",
    "apply_operator",
    "wronskian",
    "build_green",
    "green_apply",
    "boundary_trace",
    "find_eigenvalue",
    "estimate_kappa",
    "image_test",
    "pairing_norms",
    "equation_residual",
    "export_solution_csv",
    "clear_cache",
]

ORIGINAL = "original"
ADJOINT = "adjoint"
DECAYING = "decaying"
GROWING = "growing"


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FundamentalSolution:
    """Mesh samples of one fundamental solution and its derivatives.

    ``values`` has rows (phi, phi', phi'', phi''') at ``mesh.nodes``.
    ``normalization`` records the convention: unit far-field coefficient,
    i.e. phi ~ e^{-alpha y} (decaying) or e^{+alpha y} (growing), divided
    by (U - conj(c)) for the adjoint operator.  ``diagnostics`` carries a
    ``piecewise_eval`` callable (off-node evaluation of (phi, phi') from
    the dense trajectory / tail fixed point) used by the independent
    residual check, plus method-specific convergence data.
    """

    profile: ShearProfile
    params: SpectralParams
    kind: str
    operator: str
    mesh: Mesh
    values: np.ndarray
    normalization: str = "far-field amplitude 1 at y_max"
    method: str = "integration"
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def phi(self) -> np.ndarray:
        return self.values[0]

    @property
    def dphi(self) -> np.ndarray:
        return self.values[1]


@dataclass
class WronskianReport:
    j_values: np.ndarray
    constancy_defect: float
    c_alpha: complex
    weighted: bool = False


@dataclass
class InviscidGreen:
    """Two-sided coefficient representation of an inviscid Green function.

    For ``y < x``: ``G = amp(x) * phi_minus(x) * phi_plus(y) [+ bcoef(x) phi_minus(y)]``
    For ``y > x``: ``G = amp(x) * phi_plus(x) * phi_minus(y) [+ bcoef(x) phi_minus(y)]``
    with ``amp(x) = -1 / ((U(x) - c*) J(x))`` (``c* = conj(c)`` for the
    adjoint operator).  The ``ivp`` kind instead vanishes for ``y < x`` and
    is ``amp(x) * [phi_plus(x) phi_minus(y) - phi_minus(x) phi_plus(y)]``
    for ``y > x``.
    """

    profile: ShearProfile
    params: SpectralParams
    kind: str
    operator: str
    mesh: Mesh
    fs_minus: FundamentalSolution
    fs_plus: FundamentalSolution
    amp: np.ndarray
    bcoef: Optional[np.ndarray] = None
    _quad_cache: dict = field(default_factory=dict, repr=False)

    def value_at(self, x: float, y: float) -> complex:
        """Pointwise evaluation (used by probes and slices)."""
        return self._eval_rows(x, y, 0)

    def dy_at(self, x: float, y: float, order: int = 1) -> complex:
        return self._eval_rows(x, y, order)

    def _eval_rows(self, x: float, y: float, order: int) -> complex:
        rmx = solution_rows_at(self.fs_minus, [x])
        rpx = solution_rows_at(self.fs_plus, [x])
        phm = solution_rows_at(self.fs_minus, [y])[:, 0]
        php = solution_rows_at(self.fs_plus, [y])[:, 0]
        pmx, ppx = rmx[0, 0], rpx[0, 0]
        jx = rmx[0, 0] * rpx[1, 0] - rmx[1, 0] * rpx[0, 0]
        cc = _c_star(self.params, self.operator)
        ax = -1.0 / ((self.profile.u(x) - cc) * jx)
        if self.kind == "ivp":
            if y < x:
                return 0.0 + 0.0j
            return ax * (ppx * phm[order] - pmx * php[order])
        if y < x:
            val = ax * pmx * php[order]
        else:
            val = ax * ppx * phm[order]
        if self.bcoef is not None:
            ratio0 = self.fs_plus.values[0, 0] / self.fs_minus.values[0, 0]
            val = val - ax * pmx * ratio0 * phm[order]
        return val


@dataclass
class GreenApplyReport:
    residual: np.ndarray
    sup_residual: float
    scale: float


@dataclass
class KappaEstimate:
    c0: complex
    kappa: int
    leading_coeff: complex
    fit_quality: float
    fit_slope: float = 0.0
    s_operator_value: complex = 0.0 + 0.0j

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")


@dataclass
class EigenvalueResult:
    c0: complex
    multiplicity: int
    trace_abs: float


# ---------------------------------------------------------------------------
# Solution cache (concurrent read, single-writer insert)
# ---------------------------------------------------------------------------

_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def clear_cache():
    with _CACHE_LOCK:
        _CACHE.clear()


def _cache_key(p, s, kind, operator, method, mesh):
    return (
        id(p),
        p.name,
        round(s.alpha, 15),
        complex(s.c),
        kind,
        operator,
        method,
        mesh.n,
        float(mesh.nodes[1]),
        float(mesh.nodes[-1]),
    )


# ---------------------------------------------------------------------------
# Operator coefficients / rows
# ---------------------------------------------------------------------------


def _c_star(s: SpectralParams, operator: str) -> complex:
    return np.conj(s.c) if operator == ADJOINT else s.c


def _rows_from_phi01(p, s, operator, y, phi, dphi):
    """Assemble (phi, phi', phi'', phi''') using the equation.

    phi'' is obtained from the second-order equation itself and phi''' by
    differentiating it once, so the returned rows satisfy the equation by
    construction; independent residual checks sample the dense trajectory
    instead.
    """
    cc = _c_star(s, operator)
    a2 = s.alpha**2
    U = p.u(y)
    U1 = p.u1(y)
    U2 = p.u2(y)
    U3 = p.u3(y)
    g = U - cc
    if operator == ORIGINAL:
        d2 = a2 * phi + U2 * phi / g
        d3 = a2 * dphi + (U3 * phi + U2 * dphi) / g - U2 * U1 * phi / g**2
    else:
        d2 = a2 * phi - 2.0 * U1 * dphi / g
        d3 = a2 * dphi - 2.0 * (U2 * dphi + U1 * d2) / g + 2.0 * U1**2 * dphi / g**2
    return np.array([phi, dphi, d2, d3])


def solution_rows_at(fs: FundamentalSolution, y) -> np.ndarray:
    """Derivative rows (phi, phi', phi'', phi''') at arbitrary points.

    Uses the solution's piecewise evaluator for (phi, phi') and the
    second-order equation for the higher rows.  The stored node rows are
    exponential-scale data; splining them between nodes leaks relative
    error like ``e^{alpha h}``, so off-node access must go through here.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ev = fs.diagnostics.get("piecewise_eval")
    if ev is not None:
        phi, dphi = ev(y)
    else:
        sign = 1.0 if fs.kind == DECAYING else -1.0
        tilde = np.exp(sign * fs.params.alpha * fs.mesh.nodes)
        restore = np.exp(-sign * fs.params.alpha * y)
        phi = resample_to(fs.mesh.nodes, fs.values[0] * tilde, y) * restore
        dphi = resample_to(fs.mesh.nodes, fs.values[1] * tilde, y) * restore
    return _rows_from_phi01(fs.profile, fs.params, fs.operator, y, phi, dphi)


def apply_operator(p: ShearProfile, s: SpectralParams, operator: str, f_rows: np.ndarray, y: Optional[np.ndarray] = None, mesh: Optional[Mesh] = None) -> np.ndarray:
    """Pointwise application of the second-order operator to derivative rows.

    ``operator`` is ``'ray'``/``'original'`` for ``(U-c) D2a - U''`` or
    ``'ray_star'``/``'adjoint'`` for ``(U-conj c) D2a + 2 U' d/dy``.
    ``f_rows`` holds at least (f, f', f'') at the nodes of ``mesh`` (or at
    the points ``y``).
    """
    if y is None:
        if mesh is None:
            raise ValueError("apply_operator needs either y or mesh")
        y = mesh.nodes
    f0, f1, f2 = f_rows[0], f_rows[1], f_rows[2]
    a2 = s.alpha**2
    U = p.u(y)
    if operator in (ORIGINAL, "ray"):
        return (U - s.c) * (f2 - a2 * f0) - p.u2(y) * f0
    if operator in (ADJOINT, "ray_star"):
        return (U - np.conj(s.c)) * (f2 - a2 * f0) + 2.0 * p.u1(y) * f1
    raise ValueError(f"unknown operator {operator!r}")


# ---------------------------------------------------------------------------
# T operator (resolvent kernel of D2a against the profile curvature)
# ---------------------------------------------------------------------------


class _TailKernel:
    """Precomputed quadrature data for the exponential-kernel operator on
    the sub-mesh ``[ybar, y_max]``.

    Inputs are passed in the rescaled representation
    ``phi_tilde = phi * e^{-sign*alpha*y}``: the raw solutions span dozens
    of e-folds across the tail, and spline resampling of such data leaks
    the huge far-end values into the small end.  The tilde samples are
    O(1), and the exponential factor is restored analytically at the
    quadrature points.
    """

    def __init__(self, p, s, ybar, operator, mesh, sign, refine: int = 1):
        self.alpha = abs(s.alpha)
        self.sign = sign
        self.salpha = s.alpha
        self.profile = p
        self.operator = operator
        self.cbar = np.conj(s.c)
        i0 = int(np.searchsorted(mesh.nodes, ybar - 1e-12))
        sub = mesh.nodes[i0:]
        if len(sub) < 3 or sub[0] > mesh.y_max - 1e-9:
            raise ValueError("ybar too close to y_max")
        if refine > 1:
            pieces = [
                np.linspace(sub[i], sub[i + 1], refine, endpoint=False)
                for i in range(len(sub) - 1)
            ]
            sub = np.append(np.concatenate(pieces), sub[-1])
        self.nodes = sub
        a, b = sub[:-1], sub[1:]
        x, w = leggauss(12)
        self._glx, self._glw = x, w
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        self.qx = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        self.qw = (half[:, None] * w[None, :]).ravel()
        if operator == ADJOINT:
            def kernel_fn(x):
                return p.u2(x) * np.exp(sign * s.alpha * x)
        else:
            def kernel_fn(x):
                return p.u2(x) / (p.u(x) - s.c) * np.exp(sign * s.alpha * x)

        self._kernel_fn = kernel_fn
        self.kernel_q = kernel_fn(self.qx).astype(complex)
        self.pre, self.pre_d = self._prefactor(sub)

    def _prefactor(self, y):
        y = np.asarray(y, dtype=float)
        if self.operator == ADJOINT:
            g = self.profile.u(y) - self.cbar
            return 1.0 / g, -self.profile.u1(y) / g**2
        one = np.ones(y.shape, dtype=complex)
        return one, np.zeros_like(one)

    def _quad_values(self, tilde_nodes):
        return resample_to(self.nodes, tilde_nodes, self.qx) * self.kernel_q * self.qw

    def apply(self, tilde_nodes: np.ndarray) -> np.ndarray:
        conv = exp_abs_convolve(self.alpha, self.nodes, self.qx, self._quad_values(tilde_nodes))
        return self.pre * conv / (2.0 * self.alpha)

    def apply_with_derivative(self, tilde_nodes: np.ndarray, targets=None):
        """T(phi) and its y-derivative, at the tail nodes or at ``targets``.

        For off-node targets the kernel kink at ``x = y`` falls inside a
        quadrature cell, so that cell is re-integrated on two Gauss panels
        split at the target.  Node targets put the kink on a cell boundary
        and need no correction.
        """
        vals = self._quad_values(tilde_nodes)
        if targets is None:
            targets = self.nodes
            pre, pre_d = self.pre, self.pre_d
            split = False
        else:
            targets = np.asarray(targets, dtype=float)
            pre, pre_d = self._prefactor(targets)
            split = True
        conv = exp_abs_convolve(self.alpha, targets, self.qx, vals)
        conv_s = exp_abs_convolve_d(self.alpha, targets, self.qx, vals)
        if split:
            conv, conv_s = self._split_kink_cells(tilde_nodes, vals, targets, conv, conv_s)
        conv_d = self.alpha * conv_s
        t = pre * conv / (2.0 * self.alpha)
        td = pre_d * conv / (2.0 * self.alpha) + pre * conv_d / (2.0 * self.alpha)
        return t, td

    def _split_kink_cells(self, tilde_nodes, vals, targets, conv, conv_s):
        """Replace the kinked cell's contribution with two split panels."""
        a, b = self.nodes[:-1], self.nodes[1:]
        eps = 1e-12
        todo = []
        cell_of = np.clip(np.searchsorted(self.nodes, targets) - 1, 0, len(a) - 1)
        for i, t in enumerate(np.atleast_1d(targets)):
            j = int(np.atleast_1d(cell_of)[i])
            if t <= a[j] + eps or t >= b[j] - eps:
                continue
            todo.append((i, j, float(t)))
        if not todo:
            return conv, conv_s
        panels = []
        for _, j, t in todo:
            for lo, hi in ((a[j], t), (t, b[j])):
                half = 0.5 * (hi - lo)
                panels.append(0.5 * (hi + lo) + half * self._glx)
        xs = np.concatenate(panels)
        sub_vals = resample_to(self.nodes, tilde_nodes, xs) * self._kernel_fn(xs)
        conv = np.array(conv, dtype=complex, copy=True)
        conv_s = np.array(conv_s, dtype=complex, copy=True)
        for k, (i, j, t) in enumerate(todo):
            sl = slice(12 * j, 12 * (j + 1))
            e_old = np.exp(-self.alpha * np.abs(t - self.qx[sl]))
            sgn_old = -np.sign(t - self.qx[sl])
            conv[i] -= np.sum(e_old * vals[sl])
            conv_s[i] -= np.sum(sgn_old * e_old * vals[sl])
            for side, (lo, hi) in enumerate(((a[j], t), (t, b[j]))):
                x_sub = panels[2 * k + side]
                w_sub = 0.5 * (hi - lo) * self._glw
                v_sub = sub_vals[(2 * k + side) * 12:(2 * k + side + 1) * 12] * w_sub
                e_new = np.exp(-self.alpha * np.abs(t - x_sub))
                conv[i] += np.sum(e_new * v_sub)
                conv_s[i] += (1.0 if side else -1.0) * np.sum(e_new * v_sub)
        return conv, conv_s


def t_operator_apply(
    p: ShearProfile,
    s: SpectralParams,
    ybar: float,
    phi: np.ndarray,
    operator: str = ADJOINT,
    mesh: Optional[Mesh] = None,
) -> np.ndarray:
    """Apply the exponential-kernel operator on nodes >= ybar.

    ``(T phi)(y) = pre(y)/(2 alpha) * int_ybar^{y_max} e^{-alpha|y-x|} k(x) phi(x) dx``
    with ``pre = 1/(U - conj(c))``, ``k = U''`` for the adjoint operator and
    ``pre = 1``, ``k = U''/(U - c)`` for the original one.  ``phi`` holds
    values at the tail nodes of ``mesh`` (nodes >= ybar).
    """
    if mesh is None:
        mesh = default_mesh(p.y_max, s.nu, s.alpha)
    if ybar >= mesh.y_max:
        raise ValueError("ybar must be below y_max")
    ker = _TailKernel(p, s, ybar, operator, mesh, sign=0.0)
    if len(phi) != len(ker.nodes):
        raise ValueError(
            f"phi has {len(phi)} samples but the tail sub-mesh has {len(ker.nodes)} nodes"
        )
    return ker.apply(np.asarray(phi, dtype=complex))


# ---------------------------------------------------------------------------
# Fundamental solutions
# ---------------------------------------------------------------------------


def _w_system(p, s, operator, sign):
    """Rescaled first-order system for w = phi * exp(-sign*alpha*y).

    sign = -1 (decaying phi) or +1 (growing phi).  The rescaling keeps the
    state O(1) along the whole integration, which makes backward solves
    well conditioned.
    """
    cc = _c_star(s, operator)
    a = s.alpha
    if operator == ORIGINAL:

        def rhs(y):
            k = p.u2(y) / (p.u(y) - cc)
            return np.array([[0.0, 1.0], [k, -2.0 * sign * a]], dtype=complex)

    else:

        def rhs(y):
            q = 2.0 * p.u1(y) / (p.u(y) - cc)
            return np.array(
                [[0.0, 1.0], [-sign * a * q, -2.0 * sign * a - q]], dtype=complex
            )

    return rhs


def _far_field_seed(p, s, operator, sign, y0):
    """(w, w') of the normalized far-field solution at y0."""
    if operator == ORIGINAL:
        return np.array([1.0, 0.0], dtype=complex)
    g = p.u(y0) - np.conj(s.c)
    return np.array([1.0 / g, -p.u1(y0) / g**2], dtype=complex)


def _tail_seed(p, s, operator, sign, y):
    y = np.asarray(y, dtype=float)
    e = np.exp(sign * s.alpha * y)
    if operator == ORIGINAL:
        return e.astype(complex), sign * s.alpha * e
    g = p.u(y) - np.conj(s.c)
    return e / g, (sign * s.alpha / g - p.u1(y) / g**2) * e


class _TailSeries:
    """Converged fixed point ``psi = seed - T psi`` on ``[ybar, y_max]``.

    The iteration runs on the rescaled samples
    ``psi_tilde = psi * e^{-sign*alpha*y}`` (O(1) across the tail); the
    public ``psi``/``dpsi`` arrays are in the plain variable.  ``eval``
    gives (psi, psi') at arbitrary tail points through the kernel
    representation, which is what the independent residual check samples.
    """

    def __init__(self, p, s, operator, sign, mesh, ybar, tol=1e-14, max_iter=80, refine=4):
        self.kernel = _TailKernel(p, s, ybar, operator, mesh, sign, refine=refine)
        self._seed_of = lambda y: _tail_seed(p, s, operator, sign, y)
        yv = self.kernel.nodes
        descale = np.exp(-sign * s.alpha * yv)
        seed, seed_d = self._seed_of(yv)
        seed_tilde = seed * descale
        tilde = seed_tilde.copy()
        ratio = np.inf
        prev_incr = None
        for _ in range(max_iter):
            new = seed_tilde - self.kernel.apply(tilde) * descale
            incr = float(np.max(np.abs(new - tilde)))
            scale = float(np.max(np.abs(new)))
            if prev_incr not in (None, 0.0):
                ratio = incr / prev_incr
            prev_incr = incr
            tilde = new
            if incr <= tol * max(scale, 1e-300):
                break
        else:
            if not (ratio < 1.0):
                raise RuntimeError(
                    f"tail series did not contract (ratio {ratio:.3f} at ybar={ybar})"
                )
        t, td = self.kernel.apply_with_derivative(tilde)
        self.nodes = yv
        self.stride = refine
        # Far-field renormalization: for the decaying kind the kernel
        # contributions below y accumulate at the same e^{-alpha y} rate as
        # the seed, so the fixed point's amplitude is 1 - (2a)^-1 int(k psi)
        # rather than 1.  Divide it out (solutions are unique up to scale).
        self.norm = complex(tilde[-1] / seed_tilde[-1])
        self.tilde = tilde / self.norm
        self.psi = (seed - t) / self.norm
        self.dpsi = (seed_d - td) / self.norm
        self.ratio = ratio

    @property
    def coarse_nodes(self):
        return self.nodes[:: self.stride]

    @property
    def coarse_psi(self):
        return self.psi[:: self.stride]

    @property
    def coarse_dpsi(self):
        return self.dpsi[:: self.stride]

    def eval(self, y):
        seed, seed_d = self._seed_of(y)
        t, td = self.kernel.apply_with_derivative(self.tilde * self.norm, targets=y)
        return (seed - t) / self.norm, (seed_d - td) / self.norm


def fundamental_solution(
    p: ShearProfile,
    s: SpectralParams,
    kind: str = DECAYING,
    operator: str = ORIGINAL,
    method: str = "integration",
    mesh: Optional[Mesh] = None,
) -> FundamentalSolution:
    """Decaying or growing fundamental solution on the mesh.

    ``method='integration'`` integrates the rescaled equation backward
    from far-field data.  The decaying solution starts at ``y_max``; the
    growing one starts at a matching point ``y_g = min(12, y_max - 2)``
    whose data comes from the tail series -- starting the backward solve
    deep in the tail would amplify the decaying admixture by
    ``exp(2 alpha (y_max - y))``, which is exactly the ill-conditioning
    this construction avoids.  ``method='series'`` runs the resolvent
    fixed point on ``[ybar, y_max]`` and continues to 0 by backward
    integration.

    Results are cached keyed by (profile, params, kind, operator); reads
    are lock-free, inserts single-writer.
    """
    if mesh is None:
        mesh = default_mesh(p.y_max, s.nu, s.alpha)
    key = _cache_key(p, s, kind, operator, method, mesh)
    hit = _CACHE.get(key)
    if hit is not None:
        return hit

    sign = -1.0 if kind == DECAYING else 1.0
    a = s.alpha
    nodes = mesh.nodes
    diagnostics = {}

    def head_then_tail(tail: _TailSeries):
        """Backward integration on [0, ybar] from the tail's match data,
        assembled with the tail itself into full (w, w') node arrays and a
        piecewise off-node evaluator."""
        yv = tail.coarse_nodes
        i0 = mesh.n - len(yv)
        e0 = np.exp(-sign * a * yv[0])
        w_match = tail.psi[0] * e0
        dw_match = (tail.dpsi[0] - sign * a * tail.psi[0]) * e0
        traj = integrate_system(
            _w_system(p, s, operator, sign),
            (yv[0], 0.0),
            np.array([w_match, dw_match]),
            1e-13,
            t_eval=nodes[: i0 + 1],
        )
        w = np.empty(len(nodes), dtype=complex)
        dw = np.empty(len(nodes), dtype=complex)
        w[: i0 + 1], dw[: i0 + 1] = traj.y
        e_t = np.exp(-sign * a * yv)
        w[i0:] = tail.coarse_psi * e_t
        dw[i0:] = (tail.coarse_dpsi - sign * a * tail.coarse_psi) * e_t

        y_split = yv[0]

        def evaluator(yq):
            yq = np.atleast_1d(np.asarray(yq, dtype=float))
            phi = np.empty(len(yq), dtype=complex)
            dphi = np.empty(len(yq), dtype=complex)
            low = yq <= y_split
            if np.any(low):
                vw = traj.dense(yq[low])
                ee = np.exp(sign * a * yq[low])
                phi[low] = vw[0] * ee
                dphi[low] = (vw[1] + sign * a * vw[0]) * ee
            if np.any(~low):
                phi[~low], dphi[~low] = tail.eval(yq[~low])
            return phi, dphi

        return w, dw, evaluator

    if method == "integration":
        if kind == DECAYING:
            y_start = mesh.y_max
            seed = _far_field_seed(p, s, operator, sign, y_start)
            traj = integrate_system(
                _w_system(p, s, operator, sign), (y_start, 0.0), seed, 1e-12, t_eval=nodes
            )
            w, dw = traj.y

            def evaluator(yq, _dense=traj.dense):
                yq = np.atleast_1d(np.asarray(yq, dtype=float))
                vw = _dense(yq)
                ee = np.exp(sign * a * yq)
                return vw[0] * ee, (vw[1] + sign * a * vw[0]) * ee

        else:
            # Matching point for the growing solution: far-field data comes
            # from the tail fixed point, and only [0, y_g] is integrated
            # backward.  The backward solve amplifies decaying admixtures by
            # exp(2 alpha (y_g - y)), so y_g shrinks as alpha grows (capping
            # the amplification near 1e5); the tail fixed point still
            # contracts there because the curvature kernel is already small.
            y_g = min(12.0, mesh.y_max - 2.0, max(1.0, 5.75 / abs(a)))
            tail = None
            while True:
                ybar_idx = int(np.searchsorted(nodes, y_g - 1e-12))
                y_g = float(nodes[ybar_idx])
                try:
                    tail = _TailSeries(p, s, operator, sign, mesh, y_g)
                    if tail.ratio < 0.6 or not np.isfinite(tail.ratio):
                        break
                except RuntimeError:
                    pass
                y_g += 1.0
                if y_g > min(12.0, mesh.y_max - 2.0) + 1.0:
                    raise RuntimeError(
                        "growing solution: no contracting tail found below y_max"
                    )
            diagnostics["match_point"] = y_g
            diagnostics["tail_contraction"] = tail.ratio
            w, dw, evaluator = head_then_tail(tail)
    elif method == "series":
        ybar = 8.0
        tail = None
        while True:
            try:
                tail = _TailSeries(p, s, operator, sign, mesh, ybar)
                if tail.ratio < 0.6 or not np.isfinite(tail.ratio):
                    break
            except RuntimeError:
                pass
            ybar += 2.0
            if ybar > mesh.y_max - 4.0:
                raise RuntimeError("series method: no contracting tail found")
        diagnostics["ybar"] = float(tail.nodes[0])
        diagnostics["tail_contraction"] = tail.ratio
        w, dw, evaluator = head_then_tail(tail)
    else:
        raise ValueError(f"unknown method {method!r}")

    e = np.exp(sign * a * nodes)
    phi = w * e
    dphi = (dw + sign * a * w) * e
    rows = _rows_from_phi01(p, s, operator, nodes, phi, dphi)
    diagnostics["piecewise_eval"] = evaluator
    fs = FundamentalSolution(
        profile=p,
        params=s,
        kind=kind,
        operator=operator,
        mesh=mesh,
        values=rows,
        method=method,
        diagnostics=diagnostics,
    )
    with _CACHE_LOCK:
        fs = _CACHE.setdefault(key, fs)
    return fs


def boundary_trace(
    p: ShearProfile, alpha: float, c: complex, operator: str = ORIGINAL
) -> complex:
    """Rescaled boundary value ``w(0)`` of the decaying solution.

    ``w = phi * e^{alpha y}``, so ``w(0) = phi(0)``; zeros in ``c`` are the
    eigenvalues.  Analytic in ``c`` for the original operator and
    anti-analytic (a function of ``conj(c)``) for the adjoint.
    """
    s = SpectralParams(alpha, c, 0.0)
    seed = _far_field_seed(p, s, operator, -1.0, p.y_max)
    traj = integrate_system(_w_system(p, s, operator, -1.0), (p.y_max, 0.0), seed, 1e-12)
    return complex(traj.y[0, -1])


# ---------------------------------------------------------------------------
# Wronskians
# ---------------------------------------------------------------------------


def wronskian(fs_minus: FundamentalSolution, fs_plus: FundamentalSolution) -> WronskianReport:
    """``J = phi- * phi+' - phi-' * phi+`` over the mesh.

    For the original operator, ``J`` itself must be constant; for the
    adjoint, the weighted combination ``(U - c)^2 conj(J*)`` is the
    constant one, and that is what ``c_alpha``/``constancy_defect``
    report.
    """
    if fs_minus.params != fs_plus.params or fs_minus.operator != fs_plus.operator:
        raise ValueError("mismatched params or operator")
    j = fs_minus.values[0] * fs_plus.values[1] - fs_minus.values[1] * fs_plus.values[0]
    if fs_minus.operator == ORIGINAL:
        vals = j
        weighted = False
    else:
        U = fs_minus.profile.u(fs_minus.mesh.nodes)
        vals = (U - fs_minus.params.c) ** 2 * np.conj(j)
        weighted = True
    mean = complex(np.mean(vals))
    defect = float(np.max(np.abs(vals - mean)) / abs(mean))
    return WronskianReport(j_values=j, constancy_defect=defect, c_alpha=mean, weighted=weighted)


# ---------------------------------------------------------------------------
# Green functions
# ---------------------------------------------------------------------------


def build_green(
    p: ShearProfile,
    s: SpectralParams,
    kind: str = "interior",
    operator: str = ADJOINT,
    mesh: Optional[Mesh] = None,
    method: str = "integration",
) -> InviscidGreen:
    """Interior, Dirichlet, or IVP Green function of the chosen operator."""
    if mesh is None:
        mesh = default_mesh(p.y_max, 0.0, s.alpha)
    fsm = fundamental_solution(p, s, DECAYING, operator, method, mesh)
    fsp = fundamental_solution(p, s, GROWING, operator, method, mesh)
    j = fsm.values[0] * fsp.values[1] - fsm.values[1] * fsp.values[0]
    cc = _c_star(s, operator)
    amp = -1.0 / ((p.u(mesh.nodes) - cc) * j)
    bcoef = None
    if kind == "dirichlet":
        phim0 = fsm.values[0, 0]
        if abs(phim0) < 1e-10 * float(np.max(np.abs(fsm.values[0]))):
            raise ValueError(
                "Dirichlet Green function refused: boundary trace of the "
                f"decaying solution is {abs(phim0):.3e} (eigenvalue collision)"
            )
        bcoef = -amp * fsm.values[0] * (fsp.values[0, 0] / phim0)
    elif kind not in ("interior", "ivp"):
        raise ValueError(f"unknown Green kind {kind!r}")
    return InviscidGreen(
        profile=p,
        params=s,
        kind=kind,
        operator=operator,
        mesh=mesh,
        fs_minus=fsm,
        fs_plus=fsp,
        amp=amp,
        bcoef=bcoef,
    )


def _green_quad(g: InviscidGreen):
    """Cache the quadrature-side arrays of a Green function.

    Solution rows carry ``e^{+-alpha x}`` scales and vary on the
    critical-layer width near the wall, so interpolating node data leaks
    error between nodes; the cache samples the exact piecewise evaluators
    at the quadrature points instead and rebuilds the Wronskian there.
    """
    if "quad" not in g._quad_cache:
        quad = CellQuadrature(g.mesh, 12)
        qx = quad.points
        rm = solution_rows_at(g.fs_minus, qx)
        rp = solution_rows_at(g.fs_plus, qx)
        j_q = rm[0] * rp[1] - rm[1] * rp[0]
        cc = _c_star(g.params, g.operator)
        amp_q = -1.0 / ((g.profile.u(qx) - cc) * j_q)
        g._quad_cache["quad"] = quad
        g._quad_cache["amp_q"] = amp_q
        g._quad_cache["phim_q"] = rm[0]
        g._quad_cache["phip_q"] = rp[0]
        if g.bcoef is not None:
            ratio0 = g.fs_plus.values[0, 0] / g.fs_minus.values[0, 0]
            g._quad_cache["bcoef_q"] = -amp_q * rm[0] * ratio0
    return g._quad_cache


def green_apply(g: InviscidGreen, phi: np.ndarray):
    """``f(y) = int_0^inf G(x, y) phi(x) dx`` at the mesh nodes.

    The integrand kink at ``x = y`` always falls on a cell boundary
    because targets are mesh nodes.  Derivative rows of ``f`` are
    assembled analytically from the coefficient representation (including
    the jump contribution ``phi(y)/(U(y) - c*)`` in ``f''``), so the
    residual report measures genuine operator residual plus quadrature
    error, never differentiation noise.

    Returns ``(f_rows, report)`` with ``f_rows`` of shape (3, n).
    """
    cache = _green_quad(g)
    quad: CellQuadrature = cache["quad"]
    nodes = g.mesh.nodes
    n = g.mesh.n
    phi = np.asarray(phi, dtype=complex)
    phi_q = resample_to(nodes, phi, quad.points)
    w = quad.weights

    order = quad.order
    n_cells = n - 1

    def prefix_of(values_q):
        per_cell = (w * values_q).reshape(n_cells, order).sum(axis=1)
        out = np.zeros(n, dtype=complex)
        np.cumsum(per_cell, out=out[1:])
        return out

    amp_q, phim_q, phip_q = cache["amp_q"], cache["phim_q"], cache["phip_q"]
    # P(y) = int_{x<y} amp phip phi ; S(y) = int_{x>y} amp phim phi
    P = prefix_of(amp_q * phip_q * phi_q)
    total_S = prefix_of(amp_q * phim_q * phi_q)
    S = total_S[-1] - total_S

    pm = g.fs_minus.values
    pp = g.fs_plus.values
    cc = _c_star(g.params, g.operator)
    u_minus_c = g.profile.u(nodes) - cc

    if g.kind == "ivp":
        Q = prefix_of(amp_q * phim_q * phi_q)
        f0 = pm[0] * P - pp[0] * Q
        f1 = pm[1] * P - pp[1] * Q
        f2 = pm[2] * P - pp[2] * Q + phi / u_minus_c
    else:
        f0 = pm[0] * P + pp[0] * S
        f1 = pm[1] * P + pp[1] * S
        f2 = pm[2] * P + pp[2] * S + phi / u_minus_c
        if g.bcoef is not None:
            B = prefix_of(cache["bcoef_q"] * phi_q)[-1]
            f0 = f0 + B * pm[0]
            f1 = f1 + B * pm[1]
            f2 = f2 + B * pm[2]

    f_rows = np.array([f0, f1, f2])
    return f_rows, _green_residual(g, f_rows, phi)


def _green_residual(g: InviscidGreen, f_rows, phi):
    vals = apply_operator(g.profile, g.params, g.operator, f_rows, y=g.mesh.nodes)
    resid = np.abs(vals - phi)
    interior = resid[1:-1]
    scale = float(np.max(np.abs(phi))) or 1.0
    return GreenApplyReport(
        residual=resid, sup_residual=float(np.max(interior)), scale=scale
    )


# ---------------------------------------------------------------------------
# Eigenvalues and kappa
# ---------------------------------------------------------------------------


def find_eigenvalue(
    p: ShearProfile, alpha: float, search: Contour, operator: str = ORIGINAL
) -> EigenvalueResult:
    """Locate an eigenvalue inside the contour.

    The counter is the winding number of the boundary trace of the
    decaying solution (its magnitude for the adjoint operator, whose trace
    is anti-analytic in ``c``); Newton then refines from the sample of
    smallest magnitude.
    """

    def trace(c):
        return boundary_trace(p, alpha, c, operator)

    count = winding_number(trace, search)
    count = abs(count)
    if count == 0:
        raise ValueError("no eigenvalue inside the search contour")
    pts = search.points()
    vals = np.array([trace(c) for c in pts])
    scale = float(np.median(np.abs(vals)))
    c_init = complex(pts[int(np.argmin(np.abs(vals)))])
    c_init = 0.5 * (c_init + search.center)

    if operator == ADJOINT:
        root_conj = newton_root(lambda d: trace(np.conj(d)), np.conj(c_init), 1e-11 * scale)
        c0 = np.conj(root_conj)
    else:
        c0 = newton_root(trace, c_init, 1e-11 * scale)
    if c0.imag <= 0:
        raise ValueError(f"located eigenvalue {c0} has nonpositive imaginary part")
    return EigenvalueResult(c0=complex(c0), multiplicity=count, trace_abs=abs(trace(c0)))


def estimate_kappa(
    p: ShearProfile, alpha: float, c0: complex, radius: float = 1e-3
) -> KappaEstimate:
    """Vanishing order of the boundary trace at an eigenvalue.

    kappa = winding number on a small circle; cross-checked by the slope
    of ``log|trace|`` vs ``log r`` over three radii, and by one
    application of the perturbation-operator path: the kernel-pairing
    integral whose non-vanishing is equivalent to kappa = 1.
    """

    def trace(c):
        return boundary_trace(p, alpha, c, ORIGINAL)

    kappa = abs(winding_number(trace, Contour(c0, radius, 64)))

    radii = np.array([radius, radius / 2.0, radius / 4.0])
    angles = np.arange(8) * (np.pi / 4.0) + 0.1
    logs = []
    coeffs = []
    for r in radii:
        pts = c0 + r * np.exp(1j * angles)
        vals = np.array([trace(c) for c in pts])
        logs.append(np.mean(np.log(np.abs(vals))))
        coeffs.append(np.mean(vals / (pts - c0) ** kappa))
    slope = float(np.polyfit(np.log(radii), logs, 1)[0])
    coeff_var = float(np.abs(coeffs[0] - coeffs[-1]) / np.abs(coeffs[-1]))
    fit_quality = abs(slope - kappa) / kappa

    # leading coefficient of the adjoint boundary-trace expansion
    # phi*-(0) ~ C_kappa (conj(c) - conj(c0))^kappa: with
    # phi*-(0) = conj(phi-(0))/(U(0) - conj(c)) and U(0) = 0 this is
    # -conj(C_F)/conj(c0) for the fitted original-trace coefficient C_F.
    c_f = complex(np.mean(coeffs))
    leading = -np.conj(c_f) / np.conj(c0)

    s_val = _s_operator_pairing(p, alpha, c0)
    return KappaEstimate(
        c0=complex(c0),
        kappa=int(kappa),
        leading_coeff=leading,
        fit_quality=max(fit_quality, coeff_var),
        fit_slope=slope,
        s_operator_value=complex(s_val),
    )


def _s_operator_pairing(p: ShearProfile, alpha: float, c0: complex) -> complex:
    """The boundary value of one application of the eigenvalue-perturbation
    operator to the adjoint decaying solution, divided by the perturbation
    factor ``-2 (conj(c) - conj(c0))``.

    Nonzero value <=> kappa = 1.
    """
    s0 = SpectralParams(alpha, c0, 0.0)
    mesh = default_mesh(p.y_max, 0.0, alpha)
    g = build_green(p, s0, "interior", ADJOINT, mesh)
    fsm = g.fs_minus
    quad = CellQuadrature(mesh, 12)
    nodes = mesh.nodes
    integrand_nodes = (
        g.amp
        * fsm.values[0]
        * (p.u1(nodes) / (p.u(nodes) - np.conj(c0)))
        * fsm.values[1]
    )
    vals_q = resample_to(nodes, integrand_nodes, quad.points)
    return complex(g.fs_plus.values[0, 0] * quad.integrate(vals_q))


def image_test(
    p: ShearProfile,
    s_at_c0: SpectralParams,
    psi: np.ndarray,
    operator: str = ADJOINT,
    mesh: Optional[Mesh] = None,
) -> complex:
    """Pairing integral deciding membership in the operator's range.

    The range of the adjoint operator at an eigenvalue is the orthogonal
    complement of the original eigenmode: the returned integral is
    ``int conj(phi^-_{c0}(x)) psi(x) dx``.  For the original operator the
    pairing mode is the adjoint eigenmode, giving
    ``int phi^-_{c0}(x)/(U(x) - c0) psi(x) dx``.

    Membership verdict (applied by callers): ``|I| < tol * ||psi||_2 *
    ||mode||_2`` with the L2 norms from :func:`pairing_norms`.
    """
    val, _, _ = _image_pairing(p, s_at_c0, psi, operator, mesh)
    return val


def pairing_norms(
    p: ShearProfile,
    s_at_c0: SpectralParams,
    psi: np.ndarray,
    operator: str = ADJOINT,
    mesh: Optional[Mesh] = None,
):
    """``(||psi||_2, ||mode||_2)`` for the membership threshold of
    :func:`image_test`."""
    _, npsi, nmode = _image_pairing(p, s_at_c0, psi, operator, mesh)
    return npsi, nmode


def _image_pairing(p, s_at_c0, psi, operator, mesh):
    if mesh is None:
        mesh = default_mesh(p.y_max, 0.0, s_at_c0.alpha)
    fsm = fundamental_solution(p, s_at_c0, DECAYING, ORIGINAL, "integration", mesh)
    nodes = mesh.nodes
    if operator == ADJOINT:
        mode = np.conj(fsm.values[0])
    else:
        mode = fsm.values[0] / (p.u(nodes) - s_at_c0.c)
    psi = np.asarray(psi, dtype=complex)
    quad = CellQuadrature(mesh, 12)
    integrand = resample_to(nodes, mode * psi, quad.points)
    val = complex(quad.integrate(integrand))

    def l2(v):
        return float(
            np.sqrt(abs(quad.integrate(resample_to(nodes, np.abs(v) ** 2, quad.points))))
        )

    return val, l2(psi), l2(mode)


# ---------------------------------------------------------------------------
# Independent residual check
# ---------------------------------------------------------------------------


def equation_residual(fs: FundamentalSolution, n_check: int = 48) -> float:
    """Sup of the relative second-order equation residual at check points.

    Independent of the stored rows: (phi, phi') come from the solution's
    off-node evaluator and phi'' from a fourth-order finite-difference
    stencil with step 5e-4, so the check would catch a trajectory that
    fails to solve the equation even though the rows are assembled through
    it.
    """
    ev = fs.diagnostics.get("piecewise_eval")
    if ev is None:
        raise ValueError("solution carries no off-node evaluator")
    p, s = fs.profile, fs.params
    cc = _c_star(s, fs.operator)
    a2 = s.alpha**2
    nodes = fs.mesh.nodes
    idx = np.unique(np.linspace(1, fs.mesh.n - 2, n_check).astype(int))
    yc = nodes[idx]
    h = 5e-4
    yc = yc[(yc > 2.5 * h) & (yc < fs.mesh.y_max - 2.5 * h)]
    offsets = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * h
    samples = np.empty((5, len(yc)), dtype=complex)
    for k, dy in enumerate(offsets):
        samples[k], _ = ev(yc + dy)
    phi0 = samples[2]
    _, dphi0 = ev(yc)
    d2 = (
        -samples[0] + 16.0 * samples[1] - 30.0 * samples[2] + 16.0 * samples[3] - samples[4]
    ) / (12.0 * h**2)
    U = p.u(yc)
    U1 = p.u1(yc)
    U2 = p.u2(yc)
    g = U - cc
    if fs.operator == ORIGINAL:
        resid = g * (d2 - a2 * phi0) - U2 * phi0
        scale = np.abs(g) * (np.abs(d2) + a2 * np.abs(phi0)) + np.abs(U2 * phi0)
    else:
        resid = g * (d2 - a2 * phi0) + 2.0 * U1 * dphi0
        scale = np.abs(g) * (np.abs(d2) + a2 * np.abs(phi0)) + 2.0 * np.abs(U1 * dphi0)
    return float(np.max(np.abs(resid) / np.maximum(scale, 1e-300)))


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def export_solution_csv(fs: FundamentalSolution, dest):
    """Write a solution slice: y, Re phi, Im phi, Re phi', Im phi', Re phi'', Im phi''.

    ``dest`` is a path or an open text stream.
    """
    rows = fs.values

    def emit(fh):
        fh.write("y,Re phi,Im phi,Re dphi,Im dphi,Re d2phi,Im d2phi\n")
        for i, y in enumerate(fs.mesh.nodes):
            fields = [
                y,
                rows[0, i].real,
                rows[0, i].imag,
                rows[1, i].real,
                rows[1, i].imag,
                rows[2, i].real,
                rows[2, i].imag,
            ]
            fh.write(",".join(f"{v:.17g}" for v in fields) + "\n")

    if hasattr(dest, "write"):
        emit(dest)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            emit(fh)
