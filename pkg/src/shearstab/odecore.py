"""Shared numerical kernels.

* graded meshes on ``[0, y_max]`` and composite Gauss-Legendre quadrature
  whose cells align with any declared kink of the integrand,
* adaptive complex linear ODE integration (forward or backward) with
  dense output at mesh nodes,
* argument-principle winding numbers on circles,
* damped complex Newton iteration with finite-difference derivatives.

Mesh functions are plain complex arrays of values at ``mesh.nodes``; the
``CellQuadrature`` helper owns the Gauss-Legendre points of a mesh and the
quintic-spline resampling of mesh functions onto them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp
from scipy.interpolate import InterpolatedUnivariateSpline

__all__ = [
    "Mesh",
    "Contour",
    "CellQuadrature",
    "integrate_system",
    "quadrature",
    "winding_number",
    "newton_root",
]


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mesh:
    """Sorted node vector on ``[0, y_max]`` with a grading descriptor."""

    nodes: np.ndarray
    grading: str = "uniform"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ValueError("mesh needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        if nodes[0] != 0.0:
            raise ValueError("first mesh node must be 0")

    @property
    def y_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def n(self) -> int:
        return len(self.nodes)

    @staticmethod
    def uniform(y_max: float, n_cells: int) -> "Mesh":
        return Mesh(np.linspace(0.0, y_max, n_cells + 1), "uniform")

    @staticmethod
    def geometric(y_max: float, h0: float, ratio: float = 1.07) -> "Mesh":
        """Cells growing geometrically from ``h0`` at the origin.

        The default ratio 1.07 keeps the local cell size near ``0.07*y``,
        which resolves both the viscous boundary layer (via ``h0``) and
        the finite analyticity width of the coefficient functions near
        the critical point.
        """
        if h0 <= 0 or ratio <= 1.0:
            raise ValueError("need h0 > 0 and ratio > 1")
        nodes = [0.0]
        h = h0
        while nodes[-1] + h < y_max:
            nodes.append(nodes[-1] + h)
            h *= ratio
        # Stretch the last few cells slightly so the mesh ends exactly at y_max.
        nodes.append(y_max)
        if nodes[-1] - nodes[-2] < 0.25 * (nodes[-2] - nodes[-3]):
            del nodes[-2]
        return Mesh(np.array(nodes), f"geometric(h0={h0:g}, ratio={ratio:g})")

    @staticmethod
    def for_boundary_layer(
        y_max: float, width: float, n_inside: int = 20, ratio: float = 1.07
    ) -> "Mesh":
        """Geometric mesh with ``n_inside`` cells inside ``[0, width]``."""
        h0 = max(width / n_inside, 1e-7)
        return Mesh.geometric(y_max, h0, ratio)

    def refined(self) -> "Mesh":
        """Insert the midpoint of every cell."""
        mids = 0.5 * (self.nodes[1:] + self.nodes[:-1])
        return Mesh(np.sort(np.concatenate([self.nodes, mids])), self.grading + "+refined")

    def with_node(self, y: float, tol: float = 1e-12) -> "Mesh":
        """Return a mesh that contains ``y`` as a node (for kink alignment)."""
        if np.min(np.abs(self.nodes - y)) <= tol * max(1.0, abs(y)):
            return self
        return Mesh(np.sort(np.append(self.nodes, y)), self.grading + "+node")

    def index_of(self, y: float) -> int:
        i = int(np.argmin(np.abs(self.nodes - y)))
        if abs(self.nodes[i] - y) > 1e-9 * max(1.0, abs(y)):
            raise ValueError(f"{y} is not a mesh node")
        return i


def default_mesh(y_max: float, nu: float = 0.0, alpha: float = 1.0) -> Mesh:
    """Production mesh: geometric grading 1.07 with the origin cell sized
    to put >= 20 cells inside the boundary layer of width sqrt(nu/|alpha|)."""
    if nu > 0:
        width = float(np.sqrt(nu / abs(alpha)))
        # 20 cells of geometric growth 1.07 span h0*(1.07^20-1)/0.07 = 41*h0.
        h0 = min(0.02, width / 42.0)
    else:
        h0 = 0.02
    return Mesh.geometric(y_max, h0, 1.07)


# ---------------------------------------------------------------------------
# Contours
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Contour:
    """Circle in the complex plane for argument-principle counting."""

    center: complex
    radius: float
    n_points: int = 64

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.n_points < 64 or self.n_points % 2:
            raise ValueError("n_points must be even and >= 64")

    def points(self, n: Optional[int] = None) -> np.ndarray:
        n = self.n_points if n is None else n
        t = np.arange(n) * (2.0 * np.pi / n)
        return self.center + self.radius * np.exp(1j * t)


# ---------------------------------------------------------------------------
# ODE integration
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray  # shape (dim, len(t))
    dense: object = field(repr=False, default=None)

    def __call__(self, t):
        return self.dense(t)


def integrate_system(
    rhs: Callable[[float], np.ndarray],
    span: tuple,
    init: Sequence[complex],
    tol: float,
    t_eval: Optional[np.ndarray] = None,
    forcing: Optional[Callable[[float], np.ndarray]] = None,
    max_step: float = np.inf,
) -> Trajectory:
    """Integrate the linear system ``v' = rhs(y) @ v + forcing(y)``.

    ``span = (y_a, y_b)`` may be decreasing (backward integration).  Uses
    an 8th-order adaptive Runge-Kutta scheme with dense output, evaluated
    at ``t_eval`` (which may be in increasing order regardless of the
    integration direction).
    """
    if not (1e-13 <= tol <= 1e-6):
        raise ValueError("tol must lie in [1e-13, 1e-6]")
    y0 = np.asarray(init, dtype=np.complex128)
    if forcing is None:
        def f(t, v):
            return rhs(t) @ v
    else:
        def f(t, v):
            return rhs(t) @ v + forcing(t)

    # Scale the absolute floor to the data so that exponentially small
    # initial vectors (far-field seeds ~ e^{-alpha*y_max}) stay under
    # relative control instead of drowning in an O(tol) absolute budget.
    scale = float(np.max(np.abs(y0))) or 1.0
    sol = solve_ivp(
        f,
        span,
        y0,
        method="DOP853",
        rtol=tol,
        atol=tol * scale * 1e-3,
        dense_output=True,
        max_step=max_step,
    )
    if not sol.success:
        raise RuntimeError(f"integration failed: {sol.message}")
    if t_eval is None:
        t = np.array([span[1]])
        vals = sol.y[:, -1:].copy()
    else:
        t = np.asarray(t_eval, dtype=float)
        vals = sol.sol(t)
    return Trajectory(t=t, y=vals, dense=sol.sol)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


class CellQuadrature:
    """Composite Gauss-Legendre rule over the cells of a mesh.

    ``points``/``weights`` are flattened over cells.  Any integrand kink
    must sit on a cell boundary (build the mesh with ``with_node``); the
    rule is then spectrally accurate per cell.
    """

    def __init__(self, mesh: Mesh, order: int = 12):
        if order < 10:
            raise ValueError("per-cell order must be >= 10")
        self.mesh = mesh
        self.order = order
        x, w = leggauss(order)
        a = mesh.nodes[:-1]
        b = mesh.nodes[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        self.points = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        self.weights = (half[:, None] * w[None, :]).ravel()
        # prefix_cells[i] = number of quadrature points in cells left of node i
        self.points_per_cell = order
        self._n_cells = len(a)

    def integrate(self, values: np.ndarray) -> complex:
        return complex(np.dot(self.weights, values))

    def integrate_fn(self, f: Callable[[np.ndarray], np.ndarray]) -> complex:
        return complex(np.dot(self.weights, np.asarray(f(self.points))))

    def cumulative_at_nodes(self, values: np.ndarray) -> np.ndarray:
        """Antiderivative at mesh nodes: F(node_i) = int_0^{node_i} f."""
        per_cell = (self.weights * values).reshape(self._n_cells, self.order).sum(axis=1)
        out = np.zeros(self.mesh.n, dtype=np.result_type(values, 1.0 + 0j))
        np.cumsum(per_cell, out=out[1:])
        return out

    def resample(self, node_values: np.ndarray) -> np.ndarray:
        """Quintic-spline interpolation of a mesh function onto the points."""
        return resample_to(self.mesh.nodes, node_values, self.points)


def resample_to(x: np.ndarray, values: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Quintic-spline resampling of complex samples from ``x`` to ``targets``."""
    values = np.asarray(values)
    if np.iscomplexobj(values):
        re = InterpolatedUnivariateSpline(x, values.real, k=5)(targets)
        im = InterpolatedUnivariateSpline(x, values.imag, k=5)(targets)
        return re + 1j * im
    return InterpolatedUnivariateSpline(x, values, k=5)(targets)


def spline_derivative(x: np.ndarray, values: np.ndarray, order: int) -> np.ndarray:
    """Quintic-spline derivative of complex node samples, evaluated at the nodes."""
    values = np.asarray(values)
    if np.iscomplexobj(values):
        re = InterpolatedUnivariateSpline(x, values.real, k=5).derivative(order)(x)
        im = InterpolatedUnivariateSpline(x, values.imag, k=5).derivative(order)(x)
        return re + 1j * im
    return InterpolatedUnivariateSpline(x, values, k=5).derivative(order)(x)


def quadrature(
    f: Callable[[np.ndarray], np.ndarray],
    mesh: Mesh,
    order: int = 12,
    kink: Optional[float] = None,
) -> complex:
    """Composite Gauss-Legendre integral of ``f`` over the mesh.

    ``kink`` declares a single interior point where ``f`` has a derivative
    kink; the mesh is augmented so the kink is a cell boundary.
    """
    if kink is not None:
        mesh = mesh.with_node(kink)
    q = CellQuadrature(mesh, order)
    vals = np.asarray(f(q.points))
    if not np.all(np.isfinite(vals)):
        raise ValueError("nonfinite integrand samples")
    return q.integrate(vals)


# ---------------------------------------------------------------------------
# Winding numbers
# ---------------------------------------------------------------------------


def winding_number(
    f: Callable[[complex], complex],
    contour: Contour,
    max_points: int = 65536,
) -> int:
    """Integer winding of ``f`` along the contour via phase increments.

    Samples are refined adaptively until every phase increment is below
    pi/2.  Refuses (ValueError) when ``min |f|`` on the samples drops
    below ``1e-12 * max |f|`` -- the contour then passes too close to a
    zero for the count to be trusted.
    """
    angles = np.arange(contour.n_points) * (2.0 * np.pi / contour.n_points)
    values = {}

    def eval_at(a):
        if a not in values:
            values[a] = complex(f(contour.center + contour.radius * np.exp(1j * a)))
        return values[a]

    work = list(angles)
    for a in work:
        eval_at(a)

    while True:
        arr = np.array(sorted(values.keys()))
        vals = np.array([values[a] for a in arr])
        amax = np.max(np.abs(vals))
        amin = np.min(np.abs(vals))
        if amax == 0.0 or amin <= 1e-12 * amax:
            raise ValueError(
                f"winding_number: |f| nearly vanishes on contour "
                f"(min {amin:.3e}, max {amax:.3e})"
            )
        ratios = np.append(vals[1:], vals[0]) / vals
        incr = np.angle(ratios)
        bad = np.abs(incr) >= 0.5 * np.pi
        if not np.any(bad):
            total = float(np.sum(incr)) / (2.0 * np.pi)
            n = int(np.rint(total))
            if abs(total - n) > 0.25:
                raise ValueError(f"winding_number: non-integer total {total}")
            return n
        if len(arr) * 2 > max_points:
            raise ValueError("winding_number: refinement limit reached")
        next_arr = np.append(arr[1:], arr[0] + 2.0 * np.pi)
        for a0, a1 in zip(arr[bad], next_arr[bad]):
            eval_at(((a0 + a1) / 2.0) % (2.0 * np.pi))


# ---------------------------------------------------------------------------
# Newton iteration
# ---------------------------------------------------------------------------


def newton_root(
    f: Callable[[complex], complex],
    c_init: complex,
    tol: float,
    max_iter: int = 50,
) -> complex:
    """Newton iteration for an analytic scalar function.

    The derivative is a central finite difference with step
    ``h = 1e-6 * max(1, |c|)``.  Returns once ``|f(c)| < tol``; raises on
    divergence, iteration exhaustion, or derivative underflow.
    """
    c = complex(c_init)
    fc = complex(f(c))
    best = (abs(fc), c)
    for _ in range(max_iter):
        if abs(fc) < tol:
            return c
        h = 1e-6 * max(1.0, abs(c))
        df = (complex(f(c + h)) - complex(f(c - h))) / (2.0 * h)
        if abs(df) < 1e-300:
            raise RuntimeError("newton_root: derivative underflow")
        step = fc / df
        # Damped update: halve the step until |f| does not blow up.
        lam = 1.0
        for _ in range(8):
            c_new = c - lam * step
            f_new = complex(f(c_new))
            if np.isfinite(f_new) and abs(f_new) < 4.0 * abs(fc):
                break
            lam *= 0.5
        else:
            raise RuntimeError("newton_root: diverged (no acceptable step)")
        c, fc = c_new, f_new
        if abs(fc) < best[0]:
            best = (abs(fc), c)
        if abs(c) > 1e6 * max(1.0, abs(c_init)):
            raise RuntimeError("newton_root: iterates diverged")
    if best[0] < tol:
        return best[1]
    raise RuntimeError(
        f"newton_root: no convergence in {max_iter} iterations (best |f| = {best[0]:.3e})"
    )
