"""Estimation procedures: subset MLE, full MLE, finite-grid MLE, data cloning.

The subset estimators work on tractable, independently-distributed pieces
of the data.  In the known-variance mode the diagonal observations are
i.i.d. Bernoulli(p0(mu, psi2)), so the MLE inverts p0 by bisection.  In the
three-parameter mode the diagonal replicate pairs identify (mu, psi2) and
the off-diagonal pairs identify gamma = sigma2/psi2; the fit is staged
accordingly.

The full-data MLE maximizes the marginal likelihood by golden-section
search (single free parameter) or Nelder-Mead simplex (several), with
variances optimized on the log scale.  Monte-Carlo likelihoods reuse one
seed for every objective evaluation, so each fit sees a deterministic
objective (common random numbers).

Data cloning targets the power posterior  exp(K * loglik) * prior  with a
random-walk Metropolis chain; as K grows the posterior mean approaches the
MLE and K times its covariance approaches the inverse Fisher information.
The power likelihood is evaluated by exact quadrature rather than by
augmenting K copies of the random effects: at the design sizes this module
supports, the quadrature likelihood is exact and cheap, and the target
distribution is identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import (
    MU_BOUNDS,
    ResponseTable,
    SubsetKind,
    SubsetSpec,
    Theta,
)
from .likelihood import (
    marginal_loglik_exact,
    marginal_loglik_mc,
    offdiag_pair_loglik,
    p0,
    replicate_pair_masses,
    subset_diag_loglik,
    subset_pair_loglik,
    theta_from_working,
    working_bounds,
    working_values,
)
from .quadrature import DEFAULT_ORDER, TENSOR_CAP, TensorCapError

__all__ = [
    "BoundaryError",
    "FitResult",
    "CloneConfig",
    "DcResult",
    "optimize_scalar",
    "optimize_simplex",
    "fit_subset_mle",
    "fit_full_mle",
    "fit_finite_mle",
    "fit_dc_mle",
]


class BoundaryError(ValueError):
    """The estimator is undefined or diverges at the data's boundary."""


@dataclass(frozen=True)
class FitResult:
    """Outcome of one estimation run.

    ``loglik`` is the objective re-evaluated at ``theta_hat`` (so it always
    matches the returned point); ``converged`` is False when the search hit
    its iteration limit or the parameter box boundary (see ``message``).
    """

    theta_hat: Theta
    loglik: float
    converged: bool
    evaluations: int
    method: str
    message: str = ""


def optimize_scalar(
    f: Callable[[float], float],
    bracket: tuple[float, float],
    tol: float = 1e-8,
    max_iter: int = 500,
) -> tuple[float, float]:
    """Golden-section maximization of f over [lo, hi] to within tol on x."""
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError(f"invalid bracket ({lo}, {hi})")
    invphi = (math.sqrt(5.0) - 1.0) / 2.0

    def checked(x: float) -> float:
        value = float(f(x))
        if not math.isfinite(value):
            raise ValueError(f"objective is not finite at x={x}")
        return value

    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = checked(c), checked(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = checked(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = checked(d)
    x = 0.5 * (a + b)
    return x, checked(x)


def optimize_simplex(
    f: Callable[[np.ndarray], float],
    start: np.ndarray,
    scale: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 2000,
) -> tuple[np.ndarray, float, bool]:
    """Nelder-Mead maximization (reflect/expand/contract/shrink).

    Converged when the simplex diameter (max vertex distance from the best
    vertex) drops below ``tol``; otherwise the best point found is returned
    with ``converged = False``.
    """
    start = np.asarray(start, dtype=float)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), start.shape)
    d = start.shape[0]
    verts = [start.copy()]
    for c in range(d):
        v = start.copy()
        v[c] += scale[c] if scale[c] != 0 else 0.1
        verts.append(v)
    verts = np.array(verts)
    vals = np.array([f(v) for v in verts])

    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    converged = False
    for _ in range(max_iter):
        order = np.argsort(-vals)  # descending: best first
        verts, vals = verts[order], vals[order]
        if np.max(np.linalg.norm(verts[1:] - verts[0], axis=1)) < tol:
            converged = True
            break
        centroid = verts[:-1].mean(axis=0)
        xr = centroid + alpha * (centroid - verts[-1])
        fr = f(xr)
        if fr > vals[0]:
            xe = centroid + gamma * (centroid - verts[-1])
            fe = f(xe)
            if fe > fr:
                verts[-1], vals[-1] = xe, fe
            else:
                verts[-1], vals[-1] = xr, fr
        elif fr > vals[-2]:
            verts[-1], vals[-1] = xr, fr
        else:
            xc = centroid + rho * (verts[-1] - centroid)
            fc = f(xc)
            if fc > vals[-1]:
                verts[-1], vals[-1] = xc, fc
            else:
                for k in range(1, d + 1):
                    verts[k] = verts[0] + sigma * (verts[k] - verts[0])
                    vals[k] = f(verts[k])
    best = int(np.argmax(vals))
    return verts[best].copy(), float(vals[best]), converged


# ---------------------------------------------------------------------------
# Subset MLE
# ---------------------------------------------------------------------------


def _solve_p0(ybar: float, psi2: float, order: int) -> tuple[float, int]:
    """Invert p0(., psi2) at ybar by bisection over the mu box."""
    lo, hi = MU_BOUNDS
    flo = p0(lo, psi2, order=order) - ybar
    fhi = p0(hi, psi2, order=order) - ybar
    evals = 2
    if flo >= 0.0 or fhi <= 0.0:
        raise BoundaryError("subset MLE diverges: diagonal mean outside p0 range")
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        fm = p0(mid, psi2, order=order) - ybar
        evals += 1
        if fm < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), evals


def fit_subset_mle(
    data: ResponseTable,
    theta: Theta,
    which: set[SubsetKind] | None = None,
    order: int = DEFAULT_ORDER,
) -> FitResult:
    """Maximum-likelihood fit from the subset data.

    With ``theta.free == {mu}`` (known variances) the diagonal subset is
    used: mu solves p0(mu, psi2) = mean(y_ii) by bisection, and an all-zeros
    or all-ones diagonal raises `BoundaryError`.

    With all three parameters free, stage 1 fits (mu, psi2) by simplex on
    the diagonal replicate pairs and stage 2 fits gamma in [0, 1] by
    golden-section on the off-diagonal pairs; the result is mapped back via
    sigma2 = gamma * psi2, tau2 = (1 - gamma) * psi2.  ``loglik`` is the sum
    of the two subset log-likelihoods at the returned point.
    """
    free = theta.free_names()
    if free == ("mu",):
        kinds = which if which is not None else {SubsetKind.DIAGONAL}
        if SubsetKind.DIAGONAL not in kinds:
            raise ValueError("known-variance subset fit requires the diagonal subset")
        spec = SubsetSpec.resolve(SubsetKind.DIAGONAL, data.design)
        if spec.count == 0:
            raise ValueError("diagonal subset is empty for this design")
        ybar = float(np.mean([data.y[key] for (key,) in spec.elements]))
        if ybar <= 0.0 or ybar >= 1.0:
            raise BoundaryError(
                "subset MLE diverges: diagonal responses are all "
                + ("ones" if ybar >= 1.0 else "zeros")
            )
        mu_hat, evals = _solve_p0(ybar, theta.psi2, order)
        theta_hat = theta.with_free_values([mu_hat])
        loglik = subset_diag_loglik(data, theta_hat, order=order).loglik
        return FitResult(
            theta_hat=theta_hat,
            loglik=loglik,
            converged=True,
            evaluations=evals,
            method="subset_diagonal",
        )

    if free != ("mu", "sigma2", "tau2"):
        raise ValueError(f"unsupported free mask for subset fitting: {free}")

    kinds = which if which is not None else {
        SubsetKind.REPLICATE_PAIR_DIAGONAL,
        SubsetKind.OFF_DIAGONAL_PAIR,
    }
    if not {SubsetKind.REPLICATE_PAIR_DIAGONAL, SubsetKind.OFF_DIAGONAL_PAIR} <= kinds:
        raise ValueError("three-parameter subset fit requires both pair subsets")
    pair_spec = SubsetSpec.resolve(SubsetKind.REPLICATE_PAIR_DIAGONAL, data.design)
    off_spec = SubsetSpec.resolve(SubsetKind.OFF_DIAGONAL_PAIR, data.design)
    if pair_spec.count == 0 or off_spec.count == 0:
        raise ValueError("pair subsets are empty for this design")

    ysums = np.array([sum(data.y[k] for k in el) for el in pair_spec.elements])
    counts = np.bincount(ysums, minlength=3).astype(float)
    evals = 0

    def pair_obj(z: np.ndarray) -> float:
        nonlocal evals
        mu_c, psi2_c = z[0], math.exp(z[1])
        if not MU_BOUNDS[0] <= mu_c <= MU_BOUNDS[1] or not 1e-6 <= psi2_c <= 50.0:
            return -np.inf
        evals += 1
        q = replicate_pair_masses(mu_c, psi2_c, order=order)
        return float(counts @ np.log(q))

    ybar = float(ysums.mean() / 2.0)
    mu_start = math.log(max(ybar, 0.05) / max(1.0 - ybar, 0.05))
    z_hat, _f1, conv1 = optimize_simplex(
        pair_obj, np.array([mu_start, math.log(2.0)]), np.array([0.5, 0.5]), tol=1e-7
    )
    mu_hat, psi2_hat = float(z_hat[0]), float(math.exp(z_hat[1]))

    def gamma_obj(g: float) -> float:
        nonlocal evals
        evals += 1
        probe = Theta(mu_hat, g * psi2_hat, (1.0 - g) * psi2_hat, free=theta.free)
        return offdiag_pair_loglik(data, probe, order=order).loglik

    gamma_hat, _f2 = optimize_scalar(gamma_obj, (0.0, 1.0), tol=1e-7)
    theta_hat = theta.with_free_values(
        [mu_hat, gamma_hat * psi2_hat, (1.0 - gamma_hat) * psi2_hat]
    )
    loglik = (
        subset_pair_loglik(data, theta_hat, order=order).loglik
        + offdiag_pair_loglik(data, theta_hat, order=order).loglik
    )
    return FitResult(
        theta_hat=theta_hat,
        loglik=loglik,
        converged=conv1,
        evaluations=evals,
        method="subset_two_stage",
    )


# ---------------------------------------------------------------------------
# Full-data MLE
# ---------------------------------------------------------------------------


def _objective(
    data: ResponseTable,
    method: str,
    order: int,
    cap: int,
    draws: int,
    seed: int,
) -> Callable[[Theta], float]:
    if method == "quadrature":
        return lambda th: marginal_loglik_exact(data, th, order=order, cap=cap).loglik
    if method == "mc":
        # one seed for all evaluations: the objective is deterministic in theta
        return lambda th: marginal_loglik_mc(data, th, draws=draws, seed=seed, order=order).loglik
    raise ValueError(f"unknown likelihood method {method!r}")


def fit_full_mle(
    data: ResponseTable,
    theta_init: Theta,
    method: str = "quadrature",
    order: int = DEFAULT_ORDER,
    cap: int = TENSOR_CAP,
    draws: int = 500,
    seed: int = 0,
    init_from_subset: bool = True,
    tol: float = 1e-6,
) -> FitResult:
    """Maximize the marginal log-likelihood over the free parameters.

    ``theta_init`` supplies the free mask, the known constants and a
    fallback starting point; when ``init_from_subset`` the subset MLE is
    tried first as the starting point (falling back silently if the subset
    estimator fails or does not apply).  Scalar golden-section search is
    used when only mu is free, Nelder-Mead on the working scale otherwise.
    A solution within ``2 * tol`` of the parameter box is flagged as a
    boundary solution (``converged = False``).
    """
    f_theta = _objective(data, method, order, cap, draws, seed)
    evals = 0

    def f_counted(th: Theta) -> float:
        nonlocal evals
        evals += 1
        return f_theta(th)

    start = theta_init
    if init_from_subset:
        try:
            start = fit_subset_mle(data, theta_init, order=order).theta_hat
        except (BoundaryError, ValueError):
            start = theta_init

    free = theta_init.free_names()
    bounds = working_bounds(theta_init)
    message = ""
    if free == ("mu",):
        lo, hi = bounds[0]
        x_hat, f_hat = optimize_scalar(
            lambda mu_c: f_counted(theta_init.with_free_values([mu_c])), (lo, hi), tol=tol
        )
        converged = True
        if min(x_hat - lo, hi - x_hat) <= 2.0 * tol:
            converged = False
            message = "boundary: solution at the edge of the mu box"
        z_hat = np.array([x_hat])
    else:
        z0 = working_values(start)

        def f_working(z: np.ndarray) -> float:
            for zc, (lo, hi) in zip(z, bounds):
                if not lo <= zc <= hi:
                    return -np.inf
            return f_counted(theta_from_working(theta_init, z))

        z_hat, f_hat, converged = optimize_simplex(
            f_working, z0, np.full(len(free), 0.25), tol=tol
        )
        if not converged:
            message = "simplex iteration limit reached"
        for zc, (lo, hi) in zip(z_hat, bounds):
            if min(zc - lo, hi - zc) <= 2.0 * tol:
                converged = False
                message = "boundary: solution at the edge of the parameter box"

    theta_hat = theta_from_working(theta_init, z_hat)
    # ascent guarantee: never return a point worse than the starting point
    f_start = f_counted(start)
    if f_start > f_hat:
        theta_hat, f_hat = start, f_start
    loglik = f_counted(theta_hat)
    return FitResult(
        theta_hat=theta_hat,
        loglik=loglik,
        converged=converged,
        evaluations=evals,
        method=f"full_{method}",
        message=message,
    )


def fit_finite_mle(
    data: ResponseTable,
    grid: Sequence[Theta],
    order: int = DEFAULT_ORDER,
    cap: int = TENSOR_CAP,
    method: str = "auto",
    draws: int = 500,
    seed: int = 0,
) -> FitResult:
    """Exhaustive MLE over a finite parameter grid; ties break to the
    lowest grid index.

    All grid points are scored with the same likelihood path: exact
    quadrature when the design fits under the tensor cap, otherwise the
    seeded Monte-Carlo likelihood (``method='auto'``); forcing
    ``method='quadrature'`` on an oversized design raises `TensorCapError`.
    """
    if not grid:
        raise ValueError("parameter grid is empty")
    d_out = min(data.design.m, data.design.n)
    feasible = order**d_out <= cap
    if method == "auto":
        method = "quadrature" if feasible else "mc"
    if method == "quadrature" and not feasible:
        raise TensorCapError(
            f"design too large for exact quadrature: {order}^{d_out} exceeds {cap}"
        )
    f_theta = _objective(data, method, order, cap, draws, seed)
    values = [f_theta(th) for th in grid]
    best = int(np.argmax(values))
    return FitResult(
        theta_hat=grid[best],
        loglik=float(values[best]),
        converged=True,
        evaluations=len(grid),
        method=f"finite_grid_{method}",
    )


# ---------------------------------------------------------------------------
# Data cloning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CloneConfig:
    """Settings for the data-cloning sampler.

    The prior is independent normal per free parameter on the working scale
    (mu natural, variances on the log scale), centered at ``prior_mean``.
    ``proposal_sd`` defaults to 2.4/sqrt(d) times ``prior_sd`` and is
    rescaled once midway through burn-in toward an acceptance rate in
    [0.2, 0.4]; adaptation freezes before any retained draw.
    """

    K: int
    B: int
    prior_mean: Theta
    prior_sd: np.ndarray
    burn_in: int = 500
    proposal_sd: np.ndarray | None = None
    seed: int = 0
    order: int = DEFAULT_ORDER

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("clone count K must be >= 1")
        if self.B < 100:
            raise ValueError("retained draw count B must be >= 100")
        d = len(self.prior_mean.free_names())
        sd = np.asarray(self.prior_sd, dtype=float)
        if sd.shape != (d,) or np.any(sd <= 0):
            raise ValueError("prior_sd must be positive with one entry per free parameter")
        object.__setattr__(self, "prior_sd", sd)
        if self.proposal_sd is not None:
            ps = np.asarray(self.proposal_sd, dtype=float)
            if ps.shape != (d,) or np.any(ps < 0):
                raise ValueError("proposal_sd must be nonnegative with one entry per free parameter")
            object.__setattr__(self, "proposal_sd", ps)


@dataclass(frozen=True)
class DcResult:
    """Posterior summary of a data-cloning run.

    ``scaled_cov`` is K times the sample covariance of the natural-scale
    draws of the free parameters; for large K it approximates the inverse
    Fisher information at the MLE.
    """

    posterior_mean: Theta
    scaled_cov: np.ndarray
    acceptance_rate: float
    chain_summary: dict


def _ess(x: np.ndarray) -> float:
    """Effective sample size via the autocorrelation sum, truncated at the
    first nonpositive lag."""
    n = x.shape[0]
    x = x - x.mean()
    denom = float(x @ x)
    if denom == 0.0:
        return float(n)
    acc = 0.0
    for lag in range(1, n // 2):
        rho = float(x[:-lag] @ x[lag:]) / denom
        if rho <= 0.0:
            break
        acc += rho
    return n / (1.0 + 2.0 * acc)


def fit_dc_mle(data: ResponseTable, cfg: CloneConfig) -> DcResult:
    """Random-walk Metropolis on the power posterior exp(K * loglik) * prior.

    Deterministic given ``cfg.seed``.  A post-burn-in acceptance rate
    outside (0.05, 0.7) is recorded as a warning in ``chain_summary`` and
    the result is still returned.
    """
    template = cfg.prior_mean
    free = template.free_names()
    d = len(free)
    bounds = working_bounds(template)
    z_prior = working_values(template)
    prop_sd = (
        cfg.proposal_sd
        if cfg.proposal_sd is not None
        else (2.4 / math.sqrt(d)) * cfg.prior_sd
    )
    prop_sd = np.asarray(prop_sd, dtype=float).copy()

    def log_post(z: np.ndarray) -> float:
        for zc, (lo, hi) in zip(z, bounds):
            if not lo <= zc <= hi:
                return -np.inf
        th = theta_from_working(template, z)
        ll = marginal_loglik_exact(data, th, order=cfg.order).loglik
        lp = -0.5 * float(np.sum(((z - z_prior) / cfg.prior_sd) ** 2))
        return cfg.K * ll + lp

    rng = np.random.default_rng(cfg.seed)
    z = z_prior.copy()
    lp = log_post(z)
    half = max(1, cfg.burn_in // 2)

    def run(steps: int, record: np.ndarray | None) -> float:
        nonlocal z, lp
        accepted = 0
        for step in range(steps):
            prop = z + prop_sd * rng.standard_normal(d)
            lp_prop = log_post(prop)
            if math.log(rng.random()) < lp_prop - lp:
                z, lp = prop, lp_prop
                accepted += 1
            if record is not None:
                record[step] = z
        return accepted / max(steps, 1)

    rate1 = run(half, None)
    # one round of proposal rescaling, frozen before any retained draw
    if np.any(prop_sd > 0):
        prop_sd *= float(np.clip(rate1 / 0.3, 0.1, 10.0)) if rate1 > 0 else 0.1
    run(cfg.burn_in - half, None)

    draws_z = np.empty((cfg.B, d))
    rate = run(cfg.B, draws_z)

    natural = np.empty_like(draws_z)
    for b in range(cfg.B):
        natural[b] = theta_from_working(template, draws_z[b]).free_values()
    mean_nat = natural.mean(axis=0)
    cov = np.atleast_2d(np.cov(natural, rowvar=False, ddof=1))
    scaled_cov = cfg.K * cov
    # symmetrize away roundoff so the PSD invariant is exact
    scaled_cov = 0.5 * (scaled_cov + scaled_cov.T)

    warnings: list[str] = []
    if not 0.05 < rate < 0.7:
        warnings.append(
            f"acceptance rate {rate:.3f} outside (0.05, 0.7); "
            "consider adjusting proposal_sd"
        )
    summary = {
        "ess": {name: _ess(natural[:, c]) for c, name in enumerate(free)},
        "warnings": tuple(warnings),
        "burn_in_rate": rate1,
        "proposal_sd": prop_sd.copy(),
    }
    return DcResult(
        posterior_mean=template.with_free_values(mean_nat),
        scaled_cov=scaled_cov,
        acceptance_rate=rate,
        chain_summary=summary,
    )
