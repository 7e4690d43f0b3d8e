"""Seeded simulation, Monte-Carlo consistency studies, and the fixed-m
linear-model demo.

Reproducibility contract: the seed of replication ``rep`` at size (m, n)
is ``derive_seed(base_seed, m, n, rep)``, a chained SplitMix64 hash (see
`mix64`) that is independent of which estimators run or fail, so reruns
and partial reruns consume identical random streams.  Study CSV rows carry
that seed; ``runtime_ms`` records the estimator's objective-evaluation
count, a deterministic cost proxy (wall-clock would break byte-identical
reruns).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    CrossedDesign,
    ResponseTable,
    Theta,
    full_crossing,
    logistic,
    salamander_style,
)
from .estimators import (
    BoundaryError,
    CloneConfig,
    FitResult,
    fit_dc_mle,
    fit_finite_mle,
    fit_full_mle,
    fit_subset_mle,
)
from .information import subset_fisher_info
from .model import SubsetKind, SubsetSpec
from .quadrature import DEFAULT_ORDER, TENSOR_CAP

__all__ = [
    "STUDY_HEADER",
    "ESTIMATORS",
    "mix64",
    "derive_seed",
    "make_design",
    "simulate",
    "StudyConfig",
    "StudyRow",
    "run_study",
    "study_to_csv",
    "parse_study_csv",
    "limiting_demo",
    "limiting_to_csv",
    "default_clone_config",
]

STUDY_HEADER = "m,n,rep,estimator,parameter,estimate,abs_error,status,runtime_ms,seed"
ESTIMATORS = ("subset", "full_quadrature", "full_mc", "dc", "finite_grid")

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One SplitMix64 step; the full 64-bit mix used for seed derivation."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix64(*parts: int) -> int:
    """Fold integers into one 64-bit value: state starts at 0 and each part
    is absorbed as ``state = splitmix64(state XOR (part mod 2^64))``."""
    state = 0
    for part in parts:
        state = _splitmix64((state ^ (int(part) & _MASK)) & _MASK)
    return state


def derive_seed(base_seed: int, m: int, n: int, rep: int) -> int:
    """Replication seed: mix64(base_seed, m, n, rep)."""
    return mix64(base_seed, m, n, rep)


def make_design(design_rule: str, m: int, n: int) -> CrossedDesign:
    if design_rule == "full_crossing":
        return full_crossing(m, n)
    if design_rule == "salamander_style":
        return salamander_style(m, n)
    raise ValueError(f"unknown design rule {design_rule!r}")


def simulate(design_rule: str, m: int, n: int, theta0: Theta, seed: int) -> ResponseTable:
    """Draw effects and responses for one replication, deterministically.

    Draw order: u (length m), then v (length n), then one uniform per
    observation in canonical (sorted) key order.
    """
    design = make_design(design_rule, m, n)
    rng = np.random.default_rng(seed)
    u = math.sqrt(theta0.sigma2) * rng.standard_normal(m)
    v = math.sqrt(theta0.tau2) * rng.standard_normal(n)
    keys = design.observation_keys()
    probs = np.array([logistic(theta0.mu + u[i - 1] + v[j - 1]) for (i, j, _k) in keys])
    draws = rng.random(len(keys))
    y = {key: int(d < p) for key, p, d in zip(keys, probs, draws)}
    return ResponseTable(design=design, y=y)


@dataclass(frozen=True)
class StudyConfig:
    """A consistency study: a size ladder, replications, and estimators."""

    sizes: tuple[tuple[int, int], ...]
    replications: int
    theta0: Theta
    estimators: tuple[str, ...]
    base_seed: int = 0
    design_rule: str = "full_crossing"
    order: int = DEFAULT_ORDER
    draws: int = 400
    dc_clones: int = 64
    dc_draws: int = 1000
    dc_burn_in: int = 500
    grid: tuple[Theta, ...] = ()
    output_path: str | None = None

    def __post_init__(self) -> None:
        if not self.sizes:
            raise ValueError("study needs at least one (m, n) size")
        if self.replications < 1:
            raise ValueError("study needs at least one replication")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        if not self.estimators:
            raise ValueError("study needs at least one estimator")
        if "finite_grid" in self.estimators and not self.grid:
            raise ValueError("finite_grid estimator needs a parameter grid")
        make_design(self.design_rule, *self.sizes[0])
        if "full_quadrature" in self.estimators or "dc" in self.estimators:
            for (m, n) in self.sizes:
                if self.order ** min(m, n) > TENSOR_CAP:
                    raise ValueError(
                        f"size ({m},{n}) exceeds the exact-quadrature cap at order "
                        f"{self.order}; use full_mc or lower the order"
                    )


@dataclass(frozen=True)
class StudyRow:
    m: int
    n: int
    rep: int
    estimator: str
    parameter: str
    estimate: float | None
    abs_error: float | None
    status: str
    runtime_ms: int
    seed: int

    def to_csv(self) -> str:
        est = "" if self.estimate is None else f"{self.estimate:.17g}"
        err = "" if self.abs_error is None else f"{self.abs_error:.17g}"
        return (
            f"{self.m},{self.n},{self.rep},{self.estimator},{self.parameter},"
            f"{est},{err},{self.status},{self.runtime_ms},{self.seed}"
        )


def default_clone_config(
    data: ResponseTable,
    theta_template: Theta,
    K: int = 64,
    B: int = 1000,
    burn_in: int = 500,
    seed: int = 0,
    order: int = DEFAULT_ORDER,
) -> CloneConfig:
    """Clone settings with the prior centered at the subset MLE.

    The prior spread comes from the subset Fisher information at the subset
    fit (per-parameter sd = sqrt of the inverse information diagonal),
    which is cheap because subset elements are i.i.d. with finite support.
    """
    sub = fit_subset_mle(data, theta_template, order=order)
    counts = {
        kind: SubsetSpec.resolve(kind, data.design).count
        for kind in (
            SubsetKind.DIAGONAL,
            SubsetKind.REPLICATE_PAIR_DIAGONAL,
            SubsetKind.OFF_DIAGONAL_PAIR,
        )
    }
    if theta_template.free_names() == ("mu",):
        counts = {SubsetKind.DIAGONAL: counts[SubsetKind.DIAGONAL]}
    else:
        counts.pop(SubsetKind.DIAGONAL)
    info = subset_fisher_info(sub.theta_hat, counts, order=order)
    inv_diag = np.diag(np.linalg.inv(info))
    prior_sd = np.sqrt(np.maximum(inv_diag, 1e-12))
    return CloneConfig(
        K=K,
        B=B,
        burn_in=burn_in,
        prior_mean=sub.theta_hat,
        prior_sd=prior_sd,
        seed=seed,
        order=order,
    )


def _run_estimator(
    name: str, data: ResponseTable, cfg: StudyConfig, est_seed: int
) -> tuple[FitResult | None, str, int]:
    """Returns (result-or-None, status, evaluation count)."""
    theta0 = cfg.theta0
    try:
        if name == "subset":
            res = fit_subset_mle(data, theta0, order=cfg.order)
        elif name == "full_quadrature":
            res = fit_full_mle(data, theta0, method="quadrature", order=cfg.order)
        elif name == "full_mc":
            res = fit_full_mle(
                data, theta0, method="mc", order=cfg.order, draws=cfg.draws, seed=est_seed
            )
        elif name == "dc":
            clone_cfg = default_clone_config(
                data,
                theta0,
                K=cfg.dc_clones,
                B=cfg.dc_draws,
                burn_in=cfg.dc_burn_in,
                seed=est_seed,
                order=cfg.order,
            )
            dc = fit_dc_mle(data, clone_cfg)
            res = FitResult(
                theta_hat=dc.posterior_mean,
                loglik=math.nan,
                converged=True,
                evaluations=clone_cfg.B + clone_cfg.burn_in,
                method="dc",
            )
        elif name == "finite_grid":
            res = fit_finite_mle(
                data, list(cfg.grid), order=cfg.order, draws=cfg.draws, seed=est_seed
            )
        else:  # pragma: no cover
            raise ValueError(f"unknown estimator {name!r}")
    except BoundaryError:
        return None, "boundary", 0
    except ValueError as err:
        return None, f"error:{type(err).__name__}", 0
    status = "ok" if res.converged else "nonconverged"
    return res, status, res.evaluations


def run_study(cfg: StudyConfig) -> list[StudyRow]:
    """Simulate and fit every (size, replication, estimator) combination.

    Individual estimator failures become rows with an error status and
    never abort the study or shift any other replication's seed.
    """
    rows: list[StudyRow] = []
    free = cfg.theta0.free_names()
    truth = dict(zip(free, cfg.theta0.free_values()))
    for (m, n) in cfg.sizes:
        for rep in range(cfg.replications):
            rep_seed = derive_seed(cfg.base_seed, m, n, rep)
            data = simulate(cfg.design_rule, m, n, cfg.theta0, rep_seed)
            for e_idx, name in enumerate(cfg.estimators):
                est_seed = mix64(rep_seed, 1000 + e_idx)
                res, status, evals = _run_estimator(name, data, cfg, est_seed)
                for pname in free:
                    estimate = None
                    abs_error = None
                    if res is not None:
                        estimate = float(getattr(res.theta_hat, pname))
                        abs_error = abs(estimate - truth[pname])
                    rows.append(
                        StudyRow(
                            m=m,
                            n=n,
                            rep=rep,
                            estimator=name,
                            parameter=pname,
                            estimate=estimate,
                            abs_error=abs_error,
                            status=status,
                            runtime_ms=evals,
                            seed=rep_seed,
                        )
                    )
    return rows


def study_to_csv(rows: list[StudyRow]) -> str:
    return "\n".join([STUDY_HEADER] + [row.to_csv() for row in rows]) + "\n"


def parse_study_csv(text: str) -> list[StudyRow]:
    """Read rows back, recomputing nothing; abs_error consistency is checked
    against the estimate column where both are present."""
    lines = [line for line in text.splitlines() if line]
    if not lines or lines[0] != STUDY_HEADER:
        raise ValueError("unexpected study CSV header")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 10:
            raise ValueError(f"bad study row {line!r}")
        estimate = float(parts[5]) if parts[5] else None
        abs_error = float(parts[6]) if parts[6] else None
        rows.append(
            StudyRow(
                m=int(parts[0]),
                n=int(parts[1]),
                rep=int(parts[2]),
                estimator=parts[3],
                parameter=parts[4],
                estimate=estimate,
                abs_error=abs_error,
                status=parts[7],
                runtime_ms=int(parts[8]),
                seed=int(parts[9]),
            )
        )
    return rows


@dataclass(frozen=True)
class LimitingRow:
    m: int
    n: int
    replications: int
    var_empirical: float
    var_analytic: float


def limiting_demo(
    m_fixed: int,
    n_ladder: list[int],
    replications: int = 500,
    seed: int = 0,
    mu: float = 0.0,
) -> list[LimitingRow]:
    """Grand-mean variance in the balanced linear model y = mu + u + v + e.

    All effects and errors are standard normal, so the grand mean has
    variance 1/m + 1/n + 1/(mn): with m fixed it cannot go to zero (the MLE
    of mu is inconsistent), while along m = n it vanishes.
    """
    if m_fixed < 1:
        raise ValueError("m_fixed must be >= 1")
    rows = []
    for n in n_ladder:
        estimates = np.empty(replications)
        for rep in range(replications):
            rng = np.random.default_rng(derive_seed(seed, m_fixed, n, rep))
            u = rng.standard_normal(m_fixed)
            v = rng.standard_normal(n)
            e = rng.standard_normal((m_fixed, n))
            estimates[rep] = mu + u.mean() + v.mean() + e.mean()
        rows.append(
            LimitingRow(
                m=m_fixed,
                n=n,
                replications=replications,
                var_empirical=float(estimates.var(ddof=1)),
                var_analytic=1.0 / m_fixed + 1.0 / n + 1.0 / (m_fixed * n),
            )
        )
    return rows


def limiting_to_csv(rows: list[LimitingRow]) -> str:
    lines = ["m,n,replications,var_empirical,var_analytic"]
    for row in rows:
        lines.append(
            f"{row.m},{row.n},{row.replications},"
            f"{row.var_empirical:.17g},{row.var_analytic:.17g}"
        )
    return "\n".join(lines) + "\n"
