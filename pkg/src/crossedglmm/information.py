"""Exact enumeration on tiny designs: Fisher information and the subset
inequality.

Everything here treats the quadrature-evaluated model as a finite
probability model over all 2^N response tables (N capped, default 12).
Scores are central finite differences of the enumerated log-probabilities
on the working scale (variances differentiated as log-variance), one
differentiation mechanism shared with the rest of the package.

The central objects:

* ``fisher_info``        -- sum_y p(y) s(y) s(y)' for the full table or a
                            subset marginal (summing over completions);
* ``info_loss``          -- the conditional-variance identity
                            I_full = I_subset + E[Var(score | y1)];
* ``check_subset_inequality`` -- for every subset value y1,
      P_theta0{ p_theta0(y) <= lambda(y1) p_theta(y) | y1 }
          <=  lambda(y1) * p1_theta(y1) / p1_theta0(y1),
  verified by exact summation over completions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import CrossedDesign, ResponseTable, SubsetKind, SubsetSpec, Theta
from .likelihood import (
    log_marginal_outcomes,
    theta_from_working,
    working_bounds,
    working_values,
)
from .quadrature import DEFAULT_ORDER, TENSOR_CAP

__all__ = [
    "ENUMERATION_CAP",
    "EnumeratedModel",
    "InfoMatrices",
    "SubsetInequalityReport",
    "enumerate_model",
    "fisher_info",
    "info_loss",
    "subset_fisher_info",
    "check_subset_inequality",
]

# Exhaustive checks stay fast with at most 2^12 outcome tables per theta.
ENUMERATION_CAP = 12


def _all_outcomes(design: CrossedDesign) -> tuple[np.ndarray, np.ndarray]:
    """Bit table (2^N, N) over the canonical observation order, plus the
    per-outcome cell-sum arrays (2^N, m, n)."""
    keys = design.observation_keys()
    N = len(keys)
    ids = np.arange(2**N, dtype=np.int64)
    bits = ((ids[:, None] >> np.arange(N)[None, :]) & 1).astype(np.int8)
    ysums = np.zeros((2**N, design.m, design.n))
    for t, (i, j, _k) in enumerate(keys):
        ysums[:, i - 1, j - 1] += bits[:, t]
    return bits, ysums


def _check_cap(design: CrossedDesign, cap: int) -> None:
    n = design.total_observations
    if n > cap:
        raise ValueError(
            f"design has {n} observations; exhaustive enumeration is capped at {cap}"
        )


@dataclass(frozen=True)
class EnumeratedModel:
    """All 2^N outcomes of a design with their probabilities at one theta."""

    design: CrossedDesign
    theta: Theta
    order: int
    outcomes: np.ndarray  # (2^N, N) bits over design.observation_keys()
    probabilities: np.ndarray  # (2^N,)

    def outcome_table(self, index: int) -> ResponseTable:
        keys = self.design.observation_keys()
        return ResponseTable(
            self.design, {key: int(v) for key, v in zip(keys, self.outcomes[index])}
        )


def enumerate_model(
    design: CrossedDesign,
    theta: Theta,
    order: int = DEFAULT_ORDER,
    cap: int = ENUMERATION_CAP,
    tensor_cap: int = TENSOR_CAP,
) -> EnumeratedModel:
    """Probabilities of every possible response table under theta."""
    _check_cap(design, cap)
    bits, ysums = _all_outcomes(design)
    logp = log_marginal_outcomes(design, theta, ysums, order=order, cap=tensor_cap)
    probs = np.exp(logp)
    total = probs.sum()
    if not math.isfinite(total) or abs(total - 1.0) > 1e-6 or np.any(probs <= 0):
        raise ValueError(
            f"enumerated probabilities are not a distribution (sum {total}); "
            "increase the quadrature order"
        )
    return EnumeratedModel(
        design=design, theta=theta, order=order, outcomes=bits, probabilities=probs
    )


def _interior_check(theta: Theta, step: float) -> None:
    z = working_values(theta)
    for zc, (lo, hi) in zip(z, working_bounds(theta)):
        if not (lo + step <= zc <= hi - step):
            raise ValueError("theta must be interior to the parameter box for scoring")


def _enumerated_logp_shifts(
    design: CrossedDesign,
    theta: Theta,
    step: float,
    order: int,
    tensor_cap: int,
    ysums: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center log-probs plus (+step, -step) log-probs per free coordinate."""
    z = working_values(theta)
    d = z.shape[0]
    logp0 = log_marginal_outcomes(design, theta, ysums, order=order, cap=tensor_cap)
    lp_plus = np.empty((d, logp0.shape[0]))
    lp_minus = np.empty((d, logp0.shape[0]))
    for c in range(d):
        for sign, store in ((1.0, lp_plus), (-1.0, lp_minus)):
            zc = z.copy()
            zc[c] += sign * step
            store[c] = log_marginal_outcomes(
                design, theta_from_working(theta, zc), ysums, order=order, cap=tensor_cap
            )
    return logp0, lp_plus, lp_minus


def _subset_groups(
    design: CrossedDesign, subset: SubsetSpec, bits: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Group outcome tables by the value of the subset observations.

    Returns (group index per outcome, subset bit patterns per group).
    """
    keys = design.observation_keys()
    pos = [keys.index(key) for key in subset.observation_keys()]
    y1 = bits[:, pos]
    patterns, inverse = np.unique(y1, axis=0, return_inverse=True)
    return inverse.ravel(), patterns


def fisher_info(
    design: CrossedDesign,
    theta: Theta,
    subset: SubsetSpec | None = None,
    step: float = 1e-4,
    order: int = DEFAULT_ORDER,
    cap: int = ENUMERATION_CAP,
    tensor_cap: int = TENSOR_CAP,
) -> np.ndarray:
    """Fisher information of the full table, or of a subset's marginal law.

    The matrix is indexed by the free parameters in canonical order, on the
    working scale (variance rows/columns refer to log-variance).  Subset
    marginals are obtained by summing enumerated outcome probabilities over
    the completions of each subset value.
    """
    _check_cap(design, cap)
    _interior_check(theta, step)
    bits, ysums = _all_outcomes(design)
    logp0, lp_plus, lp_minus = _enumerated_logp_shifts(
        design, theta, step, order, tensor_cap, ysums
    )
    if subset is None:
        probs = np.exp(logp0)
        scores = (lp_plus - lp_minus).T / (2.0 * step)
    else:
        inverse, _patterns = _subset_groups(design, subset, bits)
        n_groups = int(inverse.max()) + 1
        p_center = np.bincount(inverse, weights=np.exp(logp0), minlength=n_groups)
        d = lp_plus.shape[0]
        scores = np.empty((n_groups, d))
        for c in range(d):
            pp = np.bincount(inverse, weights=np.exp(lp_plus[c]), minlength=n_groups)
            pm = np.bincount(inverse, weights=np.exp(lp_minus[c]), minlength=n_groups)
            scores[:, c] = (np.log(pp) - np.log(pm)) / (2.0 * step)
        probs = p_center
    info = (scores * probs[:, None]).T @ scores
    return 0.5 * (info + info.T)


@dataclass(frozen=True)
class InfoMatrices:
    """Full and subset Fisher information with the conditional-variance loss.

    Rows/columns follow ``names`` (free parameters, working scale).  The
    identity i_full = i_subset + loss and the ordering i_full >= i_subset
    are validated at construction.
    """

    names: tuple[str, ...]
    i_full: np.ndarray
    i_subset: np.ndarray
    loss: np.ndarray

    def __post_init__(self) -> None:
        gap = self.i_full - self.i_subset - self.loss
        if np.max(np.abs(gap)) > 1e-5:
            raise ValueError(
                f"information identity violated: max |I_f - I_s - loss| = "
                f"{np.max(np.abs(gap)):.3e}"
            )
        if np.min(np.linalg.eigvalsh(self.i_full - self.i_subset)) < -1e-6:
            raise ValueError("information ordering violated: I_f - I_s not PSD")


def info_loss(
    design: CrossedDesign,
    theta: Theta,
    subset: SubsetSpec,
    step: float = 1e-4,
    order: int = DEFAULT_ORDER,
    cap: int = ENUMERATION_CAP,
    tensor_cap: int = TENSOR_CAP,
) -> InfoMatrices:
    """Information lost by keeping only the subset data.

    The loss is E[Var(score(y) | y1)], computed by grouping enumerated
    outcomes on their subset value; the subset information is computed
    independently from the subset marginal, and the identity
    I_f = I_s + loss is asserted (tolerance 1e-5).
    """
    _check_cap(design, cap)
    _interior_check(theta, step)
    bits, ysums = _all_outcomes(design)
    logp0, lp_plus, lp_minus = _enumerated_logp_shifts(
        design, theta, step, order, tensor_cap, ysums
    )
    probs = np.exp(logp0)
    scores = (lp_plus - lp_minus).T / (2.0 * step)

    inverse, _patterns = _subset_groups(design, subset, bits)
    n_groups = int(inverse.max()) + 1
    p1 = np.bincount(inverse, weights=probs, minlength=n_groups)
    d = scores.shape[1]
    cond_mean = np.empty((n_groups, d))
    for c in range(d):
        cond_mean[:, c] = (
            np.bincount(inverse, weights=probs * scores[:, c], minlength=n_groups) / p1
        )
    centered = scores - cond_mean[inverse]
    loss = (centered * probs[:, None]).T @ centered
    loss = 0.5 * (loss + loss.T)

    i_full = (scores * probs[:, None]).T @ scores
    i_full = 0.5 * (i_full + i_full.T)
    i_subset = fisher_info(
        design, theta, subset=subset, step=step, order=order, cap=cap, tensor_cap=tensor_cap
    )
    return InfoMatrices(
        names=theta.free_names(), i_full=i_full, i_subset=i_subset, loss=loss
    )


def subset_fisher_info(
    theta: Theta,
    kind_counts: dict[SubsetKind, int],
    step: float = 1e-4,
    order: int = DEFAULT_ORDER,
) -> np.ndarray:
    """Fisher information of i.i.d. subset elements, summed over subsets.

    Each subset element has a finite outcome space (2 or 4 points) whose
    masses are cheap to evaluate, so the information is an exact finite sum
    of FD-score outer products times the given element counts.  Used to set
    the data-cloning prior spread from the subset fit.
    """
    from .identify import element_masses  # local import to avoid a cycle

    _interior_check(theta, step)
    z = working_values(theta)
    d = z.shape[0]
    total = np.zeros((d, d))
    for kind, count in kind_counts.items():
        if count == 0:
            continue
        p_center = element_masses(theta, kind, order=order)
        scores = np.empty((p_center.shape[0], d))
        for c in range(d):
            zp = z.copy()
            zp[c] += step
            zm = z.copy()
            zm[c] -= step
            pp = element_masses(theta_from_working(theta, zp), kind, order=order)
            pm = element_masses(theta_from_working(theta, zm), kind, order=order)
            scores[:, c] = (np.log(pp) - np.log(pm)) / (2.0 * step)
        total += count * (scores * p_center[:, None]).T @ scores
    return 0.5 * (total + total.T)


@dataclass(frozen=True)
class SubsetInequalityRow:
    y1_pattern: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass(frozen=True)
class SubsetInequalityReport:
    """Per-subset-value comparison of the conditional probability bound."""

    rows: tuple[SubsetInequalityRow, ...]
    tolerance: float

    @property
    def max_violation(self) -> float:
        return max(row.lhs - row.rhs for row in self.rows)

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance

    def to_csv(self) -> str:
        lines = ["y1_pattern,lhs,rhs,slack"]
        for row in self.rows:
            lines.append(
                f"{row.y1_pattern},{row.lhs:.17g},{row.rhs:.17g},{row.slack:.17g}"
            )
        return "\n".join(lines) + "\n"


def check_subset_inequality(
    design: CrossedDesign,
    theta0: Theta,
    theta: Theta,
    subset: SubsetSpec,
    lambda_fn: Callable[[tuple[int, ...]], float] | None = None,
    order: int = DEFAULT_ORDER,
    cap: int = ENUMERATION_CAP,
    tensor_cap: int = TENSOR_CAP,
    tolerance: float = 1e-8,
) -> SubsetInequalityReport:
    """Exact-enumeration check of the conditional likelihood-ratio bound.

    For every subset value y1, the conditional probability under theta0
    that p_theta0(y) <= lambda(y1) * p_theta(y) is summed over completions
    and compared with lambda(y1) times the subset likelihood ratio.
    ``lambda_fn`` maps a y1 bit tuple to a positive number (default 1).
    """
    _check_cap(design, cap)
    bits, ysums = _all_outcomes(design)
    logp0 = log_marginal_outcomes(design, theta0, ysums, order=order, cap=tensor_cap)
    logp1 = log_marginal_outcomes(design, theta, ysums, order=order, cap=tensor_cap)
    p_0 = np.exp(logp0)
    inverse, patterns = _subset_groups(design, subset, bits)
    n_groups = patterns.shape[0]

    p1_theta0 = np.bincount(inverse, weights=p_0, minlength=n_groups)
    p1_theta = np.bincount(inverse, weights=np.exp(logp1), minlength=n_groups)

    rows = []
    for g in range(n_groups):
        pattern = tuple(int(b) for b in patterns[g])
        lam = 1.0 if lambda_fn is None else float(lambda_fn(pattern))
        if lam <= 0:
            raise ValueError("lambda_fn must be positive")
        members = inverse == g
        event = members & (logp0 <= math.log(lam) + logp1)
        lhs = float(p_0[event].sum() / p1_theta0[g])
        rhs = float(lam * p1_theta[g] / p1_theta0[g])
        rows.append(
            SubsetInequalityRow(
                y1_pattern="".join(str(b) for b in pattern), lhs=lhs, rhs=rhs
            )
        )
    return SubsetInequalityReport(rows=tuple(rows), tolerance=tolerance)
