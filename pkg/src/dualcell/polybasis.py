"""Gauss-Radau quadrature and the nodal Lagrange basis built on it.

All routines work on the reference interval [-1, 1].  The left Radau rule
includes the node -1, which is what makes the electric basis functions
with ``alpha_j = 0`` carry the tangential trace on the ``x_j = -1`` faces.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from numpy.polynomial import legendre


@dataclass(frozen=True)
class QuadRule1D:
    """Nodes, weights and barycentric weights of a 1D rule of order ``P``."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray
    bary: np.ndarray

    @property
    def npts(self) -> int:
        return self.order + 1


def _legendre_pair(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return P_n, P_{n-1} and their derivatives at ``x`` via the three-term recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    dp_prev = np.zeros_like(x)
    dp = np.ones_like(x)
    for k in range(1, n):
        p_next = ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
        dp_next = dp_prev + (2 * k + 1) * p
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
    return p, p_prev, dp, dp_prev


def gauss_radau(P: int) -> QuadRule1D:
    """Left Gauss-Radau rule with ``P + 1`` nodes, the first one at -1.

    The interior nodes are the roots of ``(L_{n} + L_{n-1}) / (1 + x)`` with
    ``n = P + 1``; they are found by Newton iteration started from the
    Chebyshev-Radau points.

    Args:
        P: polynomial order, ``P >= 1``.

    Returns:
        The rule; exact for polynomials of degree ``2P``.
    """
    if int(P) != P or P < 1:
        raise ValueError(f"Gauss-Radau order must be an integer >= 1, got {P!r}")
    P = int(P)
    n = P + 1
    j = np.arange(1, n)
    x = -np.cos(2.0 * np.pi * j / (2 * n - 1))
    for _ in range(100):
        pn, pn1, dpn, dpn1 = _legendre_pair(n, x)
        f = pn + pn1
        df = dpn + dpn1
        # deflate the known root at -1
        step = f / (df - f / (1.0 + x))
        x = x - step
        if np.max(np.abs(step)) < 1e-15:
            break
    x = np.sort(x)
    nodes = np.concatenate(([-1.0], x))
    _, pn1, _, _ = _legendre_pair(n, nodes)
    weights = (1.0 - nodes) / (n * n * pn1**2)
    weights[0] = 2.0 / (n * n)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    bary = 1.0 / np.prod(diff, axis=1)
    return QuadRule1D(order=P, nodes=nodes, weights=weights, bary=bary)


def gauss_legendre(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Plain Gauss-Legendre nodes and weights on [-1, 1]."""
    return legendre.leggauss(npts)


def lagrange_matrix(rule: QuadRule1D, x) -> np.ndarray:
    """Values ``l_alpha(x)`` for every basis index; shape ``(len(x), P + 1)``.

    Barycentric (second) form, with exact handling of points that coincide
    with a node.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = x[:, None] - rule.nodes[None, :]
    hit = diff == 0.0
    on_node = hit.any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = rule.bary[None, :] / diff
        vals = terms / terms.sum(axis=1, keepdims=True)
    vals[on_node] = hit[on_node].astype(float)
    return vals


def lagrange_deriv_matrix(rule: QuadRule1D, x) -> np.ndarray:
    """Derivatives ``l_alpha'(x)``; shape ``(len(x), P + 1)``.

    Uses ``l_a'(x) = w_a * sum_{k != a} prod_{m != a, k} (x - xi_m)``, which
    has no removable singularities at the nodes.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = rule.npts
    diff = x[:, None] - rule.nodes[None, :]
    out = np.zeros((x.size, n))
    for a in range(n):
        acc = np.zeros(x.size)
        for k in range(n):
            if k == a:
                continue
            keep = [m for m in range(n) if m != a and m != k]
            acc += np.prod(diff[:, keep], axis=1) if keep else 1.0
        out[:, a] = rule.bary[a] * acc
    return out


def lagrange_eval(rule: QuadRule1D, alpha: int, x):
    """``l_alpha(x)``; scalar in, scalar out (arrays are accepted too)."""
    vals = lagrange_matrix(rule, x)[:, alpha]
    return vals[0] if np.ndim(x) == 0 else vals


def lagrange_deriv(rule: QuadRule1D, alpha: int, x):
    """``l_alpha'(x)``; scalar in, scalar out (arrays are accepted too)."""
    vals = lagrange_deriv_matrix(rule, x)[:, alpha]
    return vals[0] if np.ndim(x) == 0 else vals


def multi_indices(P: int) -> np.ndarray:
    """All ``alpha`` in ``{0..P}^3`` in C order (last index fastest)."""
    return np.array(list(product(range(P + 1), repeat=3)), dtype=np.int64)


def tensor_eval(rule: QuadRule1D, alpha, xhat, reflect: bool = False):
    """Tensor-product basis ``l_a1(x1) l_a2(x2) l_a3(x3)``.

    ``xhat`` may be a single point ``(3,)`` or an array ``(n, 3)``.  With
    ``reflect=True`` the basis is evaluated at ``-xhat`` (the magnetic
    convention).
    """
    pts = np.atleast_2d(np.asarray(xhat, dtype=float))
    if reflect:
        pts = -pts
    val = np.ones(pts.shape[0])
    for d in range(3):
        val = val * lagrange_matrix(rule, pts[:, d])[:, alpha[d]]
    return val[0] if np.ndim(xhat) == 1 else val


def tensor_nodes(rule: QuadRule1D) -> tuple[np.ndarray, np.ndarray]:
    """Tensor nodes ``(xi_a1, xi_a2, xi_a3)`` and weights ``W_alpha`` in C order."""
    idx = multi_indices(rule.order)
    pts = rule.nodes[idx]
    w = np.prod(rule.weights[idx], axis=1)
    return pts, w


def tensor_gauss(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre points ``(npts**3, 3)`` and weights on the cube."""
    x, w = gauss_legendre(npts)
    idx = np.array(list(product(range(npts), repeat=3)))
    return x[idx], np.prod(w[idx], axis=1)


def tensor_basis_values(rule: QuadRule1D, pts: np.ndarray, reflect: bool = False) -> np.ndarray:
    """Values of all ``(P+1)^3`` tensor basis functions at ``pts``; shape ``(n, (P+1)^3)``."""
    pts = np.asarray(pts, dtype=float)
    if reflect:
        pts = -pts
    n1 = rule.npts
    L = [lagrange_matrix(rule, pts[:, d]) for d in range(3)]
    vals = L[0][:, :, None, None] * L[1][:, None, :, None] * L[2][:, None, None, :]
    return vals.reshape(pts.shape[0], n1**3)


def tensor_basis_gradients(rule: QuadRule1D, pts: np.ndarray, reflect: bool = False) -> np.ndarray:
    """Reference gradients of all tensor basis functions; shape ``(n, (P+1)^3, 3)``.

    For ``reflect=True`` the gradient is of ``x -> l_alpha(-x)``, so the
    chain-rule sign is included.
    """
    pts = np.asarray(pts, dtype=float)
    sign = -1.0 if reflect else 1.0
    if reflect:
        pts = -pts
    n1 = rule.npts
    L = [lagrange_matrix(rule, pts[:, d]) for d in range(3)]
    D = [sign * lagrange_deriv_matrix(rule, pts[:, d]) for d in range(3)]
    g0 = D[0][:, :, None, None] * L[1][:, None, :, None] * L[2][:, None, None, :]
    g1 = L[0][:, :, None, None] * D[1][:, None, :, None] * L[2][:, None, None, :]
    g2 = L[0][:, :, None, None] * L[1][:, None, :, None] * D[2][:, None, None, :]
    out = np.stack([g0, g1, g2], axis=-1)
    return out.reshape(pts.shape[0], n1**3, 3)
