"""Domain types for the crossed-design mixed logistic model.

The model: binary responses ``y_ijk`` for cells ``(i, j)`` in an index set
S (a subset of {1..m} x {1..n}) with ``c_ij`` replicates per cell are
conditionally independent given row effects ``u_i ~ N(0, sigma2)`` and
column effects ``v_j ~ N(0, tau2)``, with

    P(y_ijk = 1 | u, v) = h(mu + u_i + v_j),    h(x) = e^x / (1 + e^x).

All indices in the public API are 1-based.  Every type here is an
immutable value after construction and safe to share across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np
from scipy.special import expit, log_expit

__all__ = [
    "PARAM_NAMES",
    "MU_BOUNDS",
    "VAR_BOUNDS",
    "CrossedDesign",
    "Theta",
    "ResponseTable",
    "RandomEffects",
    "SubsetKind",
    "SubsetSpec",
    "full_crossing",
    "salamander_style",
    "logistic",
    "logit",
    "conditional_mass",
    "complete_data_loglik",
]

# Canonical parameter order used everywhere a free-parameter vector appears.
PARAM_NAMES = ("mu", "sigma2", "tau2")

# Optimization box: the logistic saturates beyond |mu| = 10, and variances
# are kept strictly positive to avoid degenerate densities during search.
MU_BOUNDS = (-10.0, 10.0)
VAR_BOUNDS = (1e-6, 25.0)


def logistic(x):
    """The inverse-logit h(x) = e^x / (1 + e^x), overflow-safe for any finite x."""
    return expit(x)


def logit(p):
    """log(p / (1 - p)) for p in (0, 1)."""
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def conditional_mass(y: int, mu: float, u_i: float, v_j: float) -> float:
    """P(y_ijk = y | u_i, v_j) for a single binary response."""
    if y not in (0, 1):
        raise ValueError(f"response must be 0 or 1, got {y}")
    eta = mu + u_i + v_j
    return float(expit(eta) if y == 1 else expit(-eta))


@dataclass(frozen=True)
class CrossedDesign:
    """Index set of observed cells with replicate counts.

    Parameters
    ----------
    m, n : int
        Numbers of row and column factor levels.
    cells : mapping
        ``(i, j) -> c_ij`` with ``c_ij >= 1``; keys must cover every row
        index 1..m and column index 1..n at least once (irreducibility).
    """

    m: int
    n: int
    cells: Mapping[tuple[int, int], int]

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ValueError(f"m and n must be positive, got m={self.m}, n={self.n}")
        if not self.cells:
            raise ValueError("design has no cells")
        norm: dict[tuple[int, int], int] = {}
        rows_seen: set[int] = set()
        cols_seen: set[int] = set()
        for (i, j), c in sorted(self.cells.items()):
            if not (1 <= i <= self.m and 1 <= j <= self.n):
                raise ValueError(f"cell ({i},{j}) outside 1..{self.m} x 1..{self.n}")
            if int(c) < 1:
                raise ValueError(f"replicate count must be >= 1 at cell ({i},{j})")
            norm[(int(i), int(j))] = int(c)
            rows_seen.add(i)
            cols_seen.add(j)
        if rows_seen != set(range(1, self.m + 1)) or cols_seen != set(range(1, self.n + 1)):
            raise ValueError(
                "design is reducible: every row index 1..m and column index 1..n "
                "must appear in at least one cell"
            )
        object.__setattr__(self, "cells", MappingProxyType(norm))

    @property
    def total_observations(self) -> int:
        """N = sum of c_ij over all cells."""
        return sum(self.cells.values())

    def observation_keys(self) -> tuple[tuple[int, int, int], ...]:
        """All (i, j, k) keys in sorted order; this order is the canonical
        observation order used by simulation and enumeration."""
        return tuple(
            (i, j, k)
            for (i, j) in sorted(self.cells)
            for k in range(1, self.cells[(i, j)] + 1)
        )

    def count_matrix(self) -> np.ndarray:
        """(m, n) array of replicate counts, zero where a cell is absent."""
        out = np.zeros((self.m, self.n), dtype=float)
        for (i, j), c in self.cells.items():
            out[i - 1, j - 1] = c
        return out


def full_crossing(m: int, n: int, replicates: int = 1) -> CrossedDesign:
    """The complete design S = {1..m} x {1..n} with constant replicate count."""
    return CrossedDesign(
        m=m, n=n, cells={(i, j): replicates for i in range(1, m + 1) for j in range(1, n + 1)}
    )


def salamander_style(m: int, n: int) -> CrossedDesign:
    """Full crossing with two replicates on diagonal cells and one elsewhere.

    This reproduces the replicate structure used by the two-subset estimator:
    diagonal cells (i, i) carry pairs, off-diagonal cells are single shots.
    """
    cells = {(i, j): 1 for i in range(1, m + 1) for j in range(1, n + 1)}
    for i in range(1, min(m, n) + 1):
        cells[(i, i)] = 2
    return CrossedDesign(m=m, n=n, cells=cells)


@dataclass(frozen=True)
class Theta:
    """Parameter point (mu, sigma2, tau2) with a free/known mask.

    ``free`` names the parameters being estimated; the rest are treated as
    known constants (e.g. the known-variance case fixes sigma2 and tau2).
    Derived quantities: ``psi2 = sigma2 + tau2`` and ``gamma = sigma2/psi2``.
    """

    mu: float
    sigma2: float
    tau2: float
    free: frozenset[str] = field(default_factory=lambda: frozenset(PARAM_NAMES))

    def __post_init__(self) -> None:
        if self.sigma2 < 0 or self.tau2 < 0:
            raise ValueError(
                f"variances must be nonnegative, got sigma2={self.sigma2}, tau2={self.tau2}"
            )
        bad = set(self.free) - set(PARAM_NAMES)
        if bad:
            raise ValueError(f"unknown free parameters: {sorted(bad)}")
        object.__setattr__(self, "free", frozenset(self.free))

    @property
    def psi2(self) -> float:
        return self.sigma2 + self.tau2

    @property
    def gamma(self) -> float:
        if self.psi2 <= 0:
            raise ValueError("gamma undefined when sigma2 + tau2 = 0")
        return self.sigma2 / self.psi2

    def free_names(self) -> tuple[str, ...]:
        """Free parameter names in canonical order."""
        return tuple(name for name in PARAM_NAMES if name in self.free)

    def free_values(self) -> np.ndarray:
        """Values of the free parameters in canonical order."""
        return np.array([getattr(self, name) for name in self.free_names()])

    def with_free_values(self, values: Iterable[float]) -> "Theta":
        """A copy with the free parameters replaced (canonical order)."""
        values = list(values)
        names = self.free_names()
        if len(values) != len(names):
            raise ValueError(f"expected {len(names)} values, got {len(values)}")
        kwargs = {"mu": self.mu, "sigma2": self.sigma2, "tau2": self.tau2}
        for name, value in zip(names, values):
            kwargs[name] = float(value)
        return Theta(free=self.free, **kwargs)

    def values(self) -> tuple[float, float, float]:
        return (self.mu, self.sigma2, self.tau2)


@dataclass(frozen=True)
class RandomEffects:
    """Realized effect vectors u (length m) and v (length n)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        self.u.setflags(write=False)
        self.v.setflags(write=False)

    def check_lengths(self, design: CrossedDesign) -> None:
        if self.u.shape != (design.m,) or self.v.shape != (design.n,):
            raise ValueError(
                f"effect lengths ({self.u.shape[0]}, {self.v.shape[0]}) do not match "
                f"design ({design.m}, {design.n})"
            )


@dataclass(frozen=True)
class ResponseTable:
    """Binary observations keyed by (i, j, k), matching a design exactly."""

    design: CrossedDesign
    y: Mapping[tuple[int, int, int], int]

    def __post_init__(self) -> None:
        expected = set(self.design.observation_keys())
        got = set(self.y)
        if got != expected:
            missing = sorted(expected - got)[:3]
            extra = sorted(got - expected)[:3]
            raise ValueError(
                f"response keys do not match the design (missing {missing}, extra {extra})"
            )
        norm = {}
        for key, value in self.y.items():
            if value not in (0, 1):
                raise ValueError(f"response at {key} must be 0 or 1, got {value}")
            norm[key] = int(value)
        object.__setattr__(self, "y", MappingProxyType(norm))

    def y_vector(self) -> np.ndarray:
        """Responses in canonical observation order."""
        return np.array([self.y[key] for key in self.design.observation_keys()], dtype=int)

    def cell_sum_matrix(self) -> np.ndarray:
        """(m, n) array of per-cell response sums (y_ij.)."""
        out = np.zeros((self.design.m, self.design.n), dtype=float)
        for (i, j, _k), value in self.y.items():
            out[i - 1, j - 1] += value
        return out


class SubsetKind(enum.Enum):
    """The three data subsets used by the subset-based estimators."""

    DIAGONAL = "diagonal"
    REPLICATE_PAIR_DIAGONAL = "replicate_pair_diagonal"
    OFF_DIAGONAL_PAIR = "off_diagonal_pair"


@dataclass(frozen=True)
class SubsetSpec:
    """A subset kind resolved against a design.

    ``elements`` is a tuple of observation-key groups; the groups are
    mutually independent under the model (no shared u or v across groups),
    while keys inside one group may share a row effect.
    """

    kind: SubsetKind
    elements: tuple[tuple[tuple[int, int, int], ...], ...]

    @classmethod
    def resolve(cls, kind: SubsetKind, design: CrossedDesign) -> "SubsetSpec":
        elements: list[tuple[tuple[int, int, int], ...]] = []
        if kind is SubsetKind.DIAGONAL:
            for i in range(1, min(design.m, design.n) + 1):
                if (i, i) in design.cells:
                    elements.append(((i, i, 1),))
        elif kind is SubsetKind.REPLICATE_PAIR_DIAGONAL:
            for i in range(1, min(design.m, design.n) + 1):
                if design.cells.get((i, i), 0) == 2:
                    elements.append(((i, i, 1), (i, i, 2)))
        elif kind is SubsetKind.OFF_DIAGONAL_PAIR:
            i = 1
            while 2 * i <= design.n and i <= design.m:
                if (i, 2 * i - 1) in design.cells and (i, 2 * i) in design.cells:
                    elements.append(((i, 2 * i - 1, 1), (i, 2 * i, 1)))
                i += 1
        else:  # pragma: no cover
            raise ValueError(f"unknown subset kind {kind}")
        return cls(kind=kind, elements=tuple(elements))

    @property
    def count(self) -> int:
        """Number of independent subset elements (m_a)."""
        return len(self.elements)

    def observation_keys(self) -> tuple[tuple[int, int, int], ...]:
        """All observation keys in the subset, element order preserved."""
        return tuple(key for element in self.elements for key in element)


def _normal_logpdf(x: np.ndarray, var: float) -> np.ndarray:
    return -0.5 * (math.log(2.0 * math.pi * var) + np.square(x) / var)


def complete_data_loglik(
    data: ResponseTable, theta: Theta, effects: RandomEffects
) -> float:
    """Joint log density of (y, u, v): conditional Bernoulli masses plus
    the normal log densities of the effects.

    A zero variance is only admissible when the corresponding effect vector
    is identically zero (the point-mass limit), in which case it contributes
    nothing; a zero variance with a nonzero effect has no density and raises.
    """
    effects.check_lengths(data.design)
    total = 0.0
    for (i, j, _k), y in data.y.items():
        eta = theta.mu + effects.u[i - 1] + effects.v[j - 1]
        total += float(log_expit(eta) if y == 1 else log_expit(-eta))
    for values, var, name in ((effects.u, theta.sigma2, "u"), (effects.v, theta.tau2, "v")):
        if var == 0.0:
            if np.any(values != 0.0):
                raise ValueError(
                    f"zero variance with nonzero {name} effects: density undefined"
                )
            continue
        total += float(np.sum(_normal_logpdf(values, var)))
    return total
