"""Quadrature on the reference triangle and the unit interval, plus Lagrange bases."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def line_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of degree ``order``."""
    npts = max(1, (order + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1).

    Exact for total degree ``order``; weights sum to 1/2.
    """
    # Duffy map adds one degree in the collapsed direction
    u, wu = line_rule(order + 1)
    v, wv = line_rule(order)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    w = (np.outer(wu, wv) * (1.0 - U)).ravel()
    return pts, w


@lru_cache(maxsize=None)
def _exponents(k: int) -> tuple[tuple[int, int], ...]:
    return tuple((p, d - p) for d in range(k + 1) for p in range(d, -1, -1))


@lru_cache(maxsize=None)
def lagrange_nodes(k: int) -> np.ndarray:
    """Equispaced nodes: vertices first, then edge nodes, then interior nodes."""
    if k == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    verts = [(0, 0), (k, 0), (0, k)]
    nodes = list(verts)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        pa, pb = np.array(verts[a]), np.array(verts[b])
        for t in range(1, k):
            nodes.append(tuple(pa + (pb - pa) * t // k))
    for j in range(1, k):
        for i in range(1, k - j):
            nodes.append((i, j))
    return np.array(nodes, dtype=float) / k


@lru_cache(maxsize=None)
def _lagrange_coeffs(k: int) -> np.ndarray:
    nodes = lagrange_nodes(k)
    V = _monomials(nodes, k)
    return np.linalg.inv(V)


def _monomials(xi: np.ndarray, k: int) -> np.ndarray:
    ex = _exponents(k)
    return np.stack([xi[..., 0] ** p * xi[..., 1] ** q for p, q in ex], axis=-1)


def _monomial_grads(xi: np.ndarray, k: int) -> np.ndarray:
    ex = _exponents(k)
    x, y = xi[..., 0], xi[..., 1]
    dx = [p * x ** max(p - 1, 0) * y ** q if p else np.zeros_like(x) for p, q in ex]
    dy = [q * x ** p * y ** max(q - 1, 0) if q else np.zeros_like(x) for p, q in ex]
    return np.stack([np.stack(dx, axis=-1), np.stack(dy, axis=-1)], axis=-1)


def lagrange_basis(xi: np.ndarray, k: int) -> np.ndarray:
    """Values of the P_k Lagrange basis at reference points, shape ``(..., nb)``."""
    return _monomials(np.asarray(xi, dtype=float), k) @ _lagrange_coeffs(k)


def lagrange_grads(xi: np.ndarray, k: int) -> np.ndarray:
    """Reference gradients, shape ``(..., nb, 2)``."""
    g = _monomial_grads(np.asarray(xi, dtype=float), k)
    return np.einsum("...md,mb->...bd", g, _lagrange_coeffs(k))
