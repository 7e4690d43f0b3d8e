"""Gauss-Hermite rules and expectation operators for normal variates.

All rules are normalized for the probabilists' convention: a rule of
order ``q`` has nodes ``x_t`` and positive weights ``w_t`` summing to one
such that

    sum_t w_t * f(x_t)  ~=  E[f(Z)],   Z ~ N(0, 1),

and the approximation is exact for polynomials of degree <= 2q - 1.
Expectations against N(mean, var) are obtained by the affine substitution
``mean + sqrt(var) * Z``; ``var = 0`` degenerates to a point mass at the
mean (no division by zero anywhere).

Three operators are provided: one-dimensional (`expect_1d`), full
tensor-product over i.i.d. coordinates (`expect_tensor`), and equicorrelated
bivariate normal (`expect_bivariate`, via the Cholesky factorization
``X = s*z1``, ``Y = s*(rho*z1 + sqrt(1-rho^2)*z2)``).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "QuadratureRule",
    "TensorCapError",
    "DEFAULT_ORDER",
    "TENSOR_CAP",
    "gauss_hermite",
    "expect_1d",
    "expect_tensor",
    "expect_bivariate",
]

# Default order used by every likelihood evaluation in this package; the
# order-vs-order+5 stability check in the test suite validates this choice
# over the parameter box |mean| <= 10, var <= 25.
DEFAULT_ORDER = 30

# Largest admissible tensor-product node count (order ** dims).
TENSOR_CAP = 10**7


class TensorCapError(ValueError):
    """Raised when a tensor-product rule would exceed the node-count cap."""


@dataclass(frozen=True)
class QuadratureRule:
    """A normalized Gauss-Hermite rule for expectations against N(0, 1).

    Attributes
    ----------
    order : int
        Number of nodes.
    nodes : ndarray
        Node locations for a standard normal variate, symmetric about 0.
    weights : ndarray
        Positive weights summing to one.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)


_POINT_MASS = QuadratureRule(order=1, nodes=np.array([0.0]), weights=np.array([1.0]))


@functools.lru_cache(maxsize=None)
def gauss_hermite(order: int) -> QuadratureRule:
    """Return the probabilists' Gauss-Hermite rule of the given order.

    Nodes are the roots of the degree-``order`` probabilists' Hermite
    polynomial (computed via the symmetric tridiagonal eigenproblem in
    numpy); weights are renormalized to sum to one so the rule integrates
    against the N(0, 1) density directly.  Rules are immutable and cached.

    Parameters
    ----------
    order : int
        Number of nodes, between 1 and 100.
    """
    if not 1 <= int(order) <= 100:
        raise ValueError(f"quadrature order must be in [1, 100], got {order}")
    nodes, weights = np.polynomial.hermite_e.hermegauss(int(order))
    weights = weights / weights.sum()
    return QuadratureRule(order=int(order), nodes=nodes, weights=weights)


def _scaled_nodes(mean: float, var: float, rule: QuadratureRule) -> np.ndarray:
    if var < 0:
        raise ValueError(f"variance must be nonnegative, got {var}")
    if var == 0.0:
        return np.array([float(mean)])
    return float(mean) + np.sqrt(var) * rule.nodes


def expect_1d(
    f: Callable[[np.ndarray], np.ndarray],
    mean: float,
    var: float,
    rule: QuadratureRule,
) -> float:
    """E[f(X)] for X ~ N(mean, var).

    ``f`` must accept an ndarray of evaluation points and return values of
    the same shape.  ``var = 0`` returns ``f(mean)`` exactly.
    """
    if var == 0.0:
        return float(np.asarray(f(np.array([float(mean)])))[0])
    x = _scaled_nodes(mean, var, rule)
    return float(rule.weights @ np.asarray(f(x), dtype=float))


def tensor_size(order: int, dims: int) -> int:
    """Node count of the ``dims``-fold tensor product of an order-``order`` rule."""
    return int(order) ** int(dims)


def check_tensor_cap(order: int, dims: int, cap: int = TENSOR_CAP) -> None:
    """Raise `TensorCapError` if ``order ** dims`` exceeds ``cap``."""
    if tensor_size(order, dims) > cap:
        raise TensorCapError(
            f"design too large for exact quadrature: order^dims = {order}^{dims} "
            f"exceeds the cap of {cap} nodes"
        )


def expect_tensor(
    f: Callable[[np.ndarray], np.ndarray],
    dims: int,
    var: float,
    rule: QuadratureRule,
    cap: int = TENSOR_CAP,
) -> float:
    """E[f(X_1, ..., X_d)] for i.i.d. coordinates X_i ~ N(0, var).

    ``f`` maps an array of shape ``(..., dims)`` to values of shape
    ``(...)``; the full tensor-product grid is evaluated in one call.
    Raises `TensorCapError` when ``order ** dims`` exceeds ``cap``.
    """
    if dims < 1:
        raise ValueError("dims must be a positive integer")
    if dims == 1:
        return expect_1d(lambda x: np.asarray(f(x[:, None])), 0.0, var, rule)
    check_tensor_cap(rule.order if var > 0 else 1, dims, cap)
    nodes = _scaled_nodes(0.0, var, rule)
    weights = rule.weights if var > 0 else np.array([1.0])
    grids = np.meshgrid(*([nodes] * dims), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    vals = np.asarray(f(pts), dtype=float)
    wgrids = np.meshgrid(*([weights] * dims), indexing="ij")
    w = np.ones(pts.shape[0])
    for g in wgrids:
        w *= g.ravel()
    return float(w @ vals)


def expect_bivariate(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    var: float,
    corr: float,
    rule: QuadratureRule,
) -> float:
    """E[f(X, Y)] for a centered bivariate normal pair.

    ``var(X) = var(Y) = var`` and ``cor(X, Y) = corr``; the pair is generated
    from two independent standard normals by ``X = s*z1`` and
    ``Y = s*(corr*z1 + sqrt(1 - corr^2)*z2)`` with ``s = sqrt(var)``, so the
    tensor product of the 1-d rule applies.  ``f`` must be vectorized over
    equally-shaped arrays.
    """
    if var <= 0:
        raise ValueError(f"variance must be positive, got {var}")
    if not -1.0 <= corr <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {corr}")
    s = np.sqrt(var)
    z1 = rule.nodes[:, None]
    z2 = rule.nodes[None, :]
    x = s * z1
    y = s * (corr * z1 + np.sqrt(max(0.0, 1.0 - corr * corr)) * z2)
    vals = np.asarray(f(np.broadcast_to(x, (rule.order, rule.order)), y), dtype=float)
    w = rule.weights[:, None] * rule.weights[None, :]
    return float(np.sum(w * vals))
