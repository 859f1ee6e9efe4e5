"""Independent reference computations used to freeze expected test values.

Everything here is deliberately built on a *different* discretization than
the package itself (global Chebyshev collocation on an algebraically mapped
half-line vs. the package's adaptive shooting / graded-mesh quadrature), so
agreement between the two is meaningful evidence rather than a tautology.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import eig


def cheb(n: int):
    """Chebyshev differentiation matrix on n+1 Gauss-Lobatto points.

    Standard Trefethen construction; x runs from 1 down to -1.
    """
    if n == 0:
        return np.zeros((1, 1)), np.ones(1)
    k = np.arange(n + 1)
    x = np.cos(np.pi * k / n)
    c = np.hstack((2.0, np.ones(n - 1), 2.0)) * (-1.0) ** k
    X = np.tile(x, (n + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(n + 1))
    D = D - np.diag(D.sum(axis=1))
    return D, x


def halfline_collocation(n: int, length: float = 4.0):
    """Collocation nodes/derivatives on [0, inf) via y = L(1+x)/(1-x).

    Returns (y, D1, D2) where D1, D2 differentiate functions of y sampled
    at the mapped nodes.  The map concentrates points near y = 0 and pushes
    the last node to infinity; rows for the point at infinity are dropped
    by callers through boundary conditions.
    """
    D, x = cheb(n)
    # Reverse so y is increasing; y[-1] is +inf (handled by BCs).
    x = x[::-1]
    D = D[::-1, ::-1]
    with np.errstate(divide="ignore"):
        y = length * (1.0 + x) / (1.0 - x)
    # dy/dx = 2L/(1-x)^2, so d/dy = (1-x)^2/(2L) d/dx
    sx = (1.0 - x) ** 2 / (2.0 * length)
    D1 = sx[:, None] * D
    D2 = D1 @ D1
    return y, D1, D2


def rayleigh_collocation_eigs(profile, alpha: float, n: int = 220, length: float = 4.0):
    """Eigenvalues c of (U - c)(phi'' - alpha^2 phi) - U'' phi = 0, phi(0)=phi(inf)=0.

    Generalized eigenproblem A phi = c B phi on interior mapped nodes.
    Spurious modes (from the continuous spectrum discretization) cluster on
    the real axis; callers filter by Im c.
    """
    y, D1, D2 = halfline_collocation(n, length)
    yi = y[1:-1]
    Dyy = D2[1:-1, 1:-1]
    U = profile.u(yi)
    U2 = profile.u2(yi)
    lap = Dyy - alpha**2 * np.eye(len(yi))
    A = U[:, None] * lap - np.diag(U2)
    B = lap
    w = eig(A, B, right=False)
    w = w[np.isfinite(w)]
    return np.sort_complex(w)


def unstable_rayleigh_mode(profile, alpha: float, n: int = 220, length: float = 4.0):
    """Most unstable discrete Rayleigh eigenvalue (largest Im c)."""
    w = rayleigh_collocation_eigs(profile, alpha, n, length)
    w = w[w.imag > 1e-4]
    if len(w) == 0:
        raise RuntimeError("no unstable mode found by collocation")
    return w[np.argmax(w.imag)]
