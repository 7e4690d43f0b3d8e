"""Marginal log-likelihoods for the crossed mixed logistic model.

The marginal probability of a response table is an (m + n)-dimensional
integral over the row effects u and column effects v.  Conditionally on u
the columns are independent, so the integral collapses to

    L(theta) = E_u [ prod_j  E_{v_j} [ prod_{i : (i,j) in S} prod_k f_ijk ] ],

an outer tensor-product quadrature over the smaller factor (the design is
transposed when m > n, swapping the two variances) with a one-dimensional
inner quadrature per column.  All products are accumulated in log space:
each inner integral is a log-sum-exp over the inner nodes and the outer sum
is a log-sum-exp over node tuples, so no intermediate product can underflow
regardless of the table size.

Also here: the subset-data likelihoods (diagonal Bernoulli, diagonal
replicate pairs, off-diagonal pairs sharing a row effect), the scalar
functions p0 and (M1, M2), the off-diagonal (1,1)-outcome mass as a
function of the correlation gamma, and a finite-difference score.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit, logsumexp

from .model import (
    MU_BOUNDS,
    VAR_BOUNDS,
    CrossedDesign,
    ResponseTable,
    SubsetKind,
    SubsetSpec,
    Theta,
)
from .quadrature import DEFAULT_ORDER, TENSOR_CAP, TensorCapError, gauss_hermite

__all__ = [
    "LikelihoodValue",
    "marginal_loglik_exact",
    "marginal_loglik_mc",
    "log_marginal_outcomes",
    "p0",
    "m_function",
    "p_gamma_11",
    "replicate_pair_masses",
    "offdiag_pair_masses",
    "subset_diag_loglik",
    "subset_pair_loglik",
    "offdiag_pair_loglik",
    "loglik_gradient_fd",
    "working_values",
    "theta_from_working",
    "working_bounds",
]

EXACT = "exact_quadrature"
MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class LikelihoodValue:
    """A log-likelihood with evaluation metadata.

    ``mc_std_error`` is present exactly when the value came from the
    Monte-Carlo path; ``evaluations`` counts outer integrand evaluations
    (node tuples for quadrature, draws for Monte Carlo).
    """

    loglik: float
    method: str
    evaluations: int
    mc_std_error: float | None = None

    def __post_init__(self) -> None:
        if (self.method == MONTE_CARLO) != (self.mc_std_error is not None):
            raise ValueError("mc_std_error must be present iff method is monte_carlo")


# ---------------------------------------------------------------------------
# Working-scale parameter transform (variances live on the log scale so that
# searches and finite differences stay inside the positivity constraint).
# ---------------------------------------------------------------------------


def working_values(theta: Theta) -> np.ndarray:
    """Free parameters as a working vector: mu natural, variances log."""
    out = []
    for name in theta.free_names():
        value = getattr(theta, name)
        out.append(value if name == "mu" else math.log(value))
    return np.array(out)


def theta_from_working(template: Theta, z: np.ndarray) -> Theta:
    """Inverse of `working_values` against a template's free mask."""
    values = []
    for name, zc in zip(template.free_names(), np.asarray(z, dtype=float)):
        values.append(zc if name == "mu" else math.exp(zc))
    return template.with_free_values(values)


def working_bounds(theta: Theta) -> list[tuple[float, float]]:
    """Optimization box on the working scale, one (lo, hi) per free parameter."""
    out = []
    for name in theta.free_names():
        if name == "mu":
            out.append(MU_BOUNDS)
        else:
            out.append((math.log(VAR_BOUNDS[0]), math.log(VAR_BOUNDS[1])))
    return out


# ---------------------------------------------------------------------------
# Core engine
# ---------------------------------------------------------------------------


def _orient(design: CrossedDesign, theta: Theta) -> tuple[np.ndarray, float, float, bool]:
    """Counts matrix oriented so the outer (tensor) factor is the smaller one.

    Returns (C, var_out, var_in, transposed); the likelihood is invariant
    under transposing the design with the two variances swapped.
    """
    C = design.count_matrix()
    if design.m <= design.n:
        return C, theta.sigma2, theta.tau2, False
    return C.T.copy(), theta.tau2, theta.sigma2, True


def _oriented_cell_sums(Ysum: np.ndarray, transposed: bool) -> np.ndarray:
    return Ysum.T.copy() if transposed else Ysum


def _nodes_for(var: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Scaled nodes and log weights; zero variance is a point mass at 0."""
    if var == 0.0:
        return np.array([0.0]), np.array([0.0])
    rule = gauss_hermite(order)
    return math.sqrt(var) * rule.nodes, np.log(rule.weights)


def _lse_last(x: np.ndarray) -> np.ndarray:
    """Log-sum-exp over the last axis with the max shift done in place."""
    m = np.max(x, axis=-1, keepdims=True)
    np.subtract(x, m, out=x)
    np.exp(x, out=x)
    return m[..., 0] + np.log(np.sum(x, axis=-1))


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    """Stable log h(x) = min(x, 0) - log1p(exp(-|x|)) (sign-split form)."""
    out = -np.log1p(np.exp(-np.abs(x)))
    out += np.minimum(x, 0.0)
    return out


def _digits_range(n_out: int, d_out: int, t0: int, t1: int) -> np.ndarray:
    """Mixed-radix decode of outer tuple indices t0..t1 into node indices."""
    t = np.arange(t0, t1, dtype=np.int64)
    powers = n_out ** np.arange(d_out - 1, -1, -1, dtype=np.int64)
    return (t[:, None] // powers[None, :]) % n_out


@functools.lru_cache(maxsize=8)
def _tuple_grid_cached(n_out: int, d_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Full tuple grid with per-tuple log-weight sums, for small tensors."""
    digits = _digits_range(n_out, d_out, 0, n_out**d_out)
    if n_out == 1:
        w_sum = np.zeros(digits.shape[0])
    else:
        log_w = np.log(gauss_hermite(n_out).weights)
        w_sum = log_w[digits].sum(axis=1)
    digits.setflags(write=False)
    w_sum.setflags(write=False)
    return digits, w_sum


def _tuple_chunk(
    n_out: int, d_out: int, c0: int, c1: int
) -> tuple[np.ndarray, np.ndarray]:
    """Digits and log-weight sums for one chunk, cached when the whole grid
    is small enough to hold."""
    if n_out**d_out * d_out <= 4_000_000:
        digits, w_sum = _tuple_grid_cached(n_out, d_out)
        return digits[c0:c1], w_sum[c0:c1]
    digits = _digits_range(n_out, d_out, c0, c1)
    if n_out == 1:
        return digits, np.zeros(digits.shape[0])
    log_w = np.log(gauss_hermite(n_out).weights)
    return digits, log_w[digits].sum(axis=1)


def _column_patterns(
    C: np.ndarray, Ysums: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Per column: (row indices, counts, unique cell-sum patterns, inverse map).

    The inner integral of a column depends on the outcome table only through
    the per-row response sums in that column, so distinct outcomes sharing a
    column pattern share the integral.
    """
    out = []
    for b in range(C.shape[1]):
        rows = np.nonzero(C[:, b])[0]
        col = Ysums[:, rows, b]
        patterns, inverse = np.unique(col, axis=0, return_inverse=True)
        out.append((rows, C[rows, b], patterns, inverse.ravel()))
    return out


def _single_outcome_logliks(
    X: np.ndarray, Ct: np.ndarray, Yt: np.ndarray, log_w_in: np.ndarray
) -> np.ndarray:
    """Log conditional likelihood of one outcome table per outer point.

    ``X[c, i, s] = mu + u_c[i] + v_s``; a cell with count c_ij and response
    sum y_ij contributes ``c_ij*(log h(X) - X) + y_ij*X``, columns are
    integrated by log-sum-exp over s and then summed.  ``Ct`` and ``Yt`` are
    the transposed (n, m) count and cell-sum matrices; note that
    log h(x) - x = log h(-x).
    """
    col = np.matmul(Ct, _log_sigmoid(-X))
    col += np.matmul(Yt, X)
    col += log_w_in[None, None, :]
    return _lse_last(col).sum(axis=1)


def _chunk_column_logI(
    X: np.ndarray,
    columns: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    log_w_in: np.ndarray,
) -> list[np.ndarray]:
    """Log inner integrals per column and per column pattern, for one chunk
    of outer points (the batched-outcome variant of the reduction above)."""
    D = _log_sigmoid(-X)
    out = []
    for rows, counts, patterns, _inverse in columns:
        base = np.matmul(counts[None, :], D[:, rows, :])  # (c, 1, S)
        vals = np.matmul(patterns, X[:, rows, :])  # (c, P, S)
        vals += base
        vals += log_w_in[None, None, :]
        out.append(_lse_last(vals).T)  # (P, c)
    return out


def _pick_chunk(d_out: int, n_inner: int, max_pat: int) -> int:
    budget = 3_000_000
    per = max(d_out, max_pat, 1) * max(n_inner, 1)
    return int(min(262_144, max(1024, budget // per)))


def log_marginal_outcomes(
    design: CrossedDesign,
    theta: Theta,
    Ysums: np.ndarray,
    order: int = DEFAULT_ORDER,
    cap: int = TENSOR_CAP,
) -> np.ndarray:
    """Log marginal probabilities for a batch of outcome tables.

    ``Ysums`` has shape (B, m, n) and holds per-cell response sums
    (y_ij.); the design's replicate counts bound each entry.  This is the
    exact-quadrature workhorse shared by `marginal_loglik_exact` and the
    enumeration machinery.
    """
    C, var_out, var_in, transposed = _orient(design, theta)
    Ysums = np.asarray(Ysums, dtype=float)
    if Ysums.ndim != 3:
        raise ValueError("Ysums must have shape (batch, m, n)")
    Ysums = np.stack([_oriented_cell_sums(ys, transposed) for ys in Ysums])
    d_out, _d_in = C.shape
    u_val, _ = _nodes_for(var_out, order)
    v_val, log_w_in = _nodes_for(var_in, order)
    n_out = u_val.shape[0]
    T = n_out**d_out
    if T > cap:
        raise TensorCapError(
            f"design too large for exact quadrature: {n_out}^{d_out} outer nodes "
            f"exceed the cap of {cap}"
        )
    B = Ysums.shape[0]
    mu = theta.mu

    if B == 1:
        Ct = np.ascontiguousarray(C.T)
        Yt = np.ascontiguousarray(Ysums[0].T)
        chunk = _pick_chunk(d_out, v_val.shape[0], 1)
        parts = []
        for c0 in range(0, T, chunk):
            c1 = min(c0 + chunk, T)
            digits, w_sum = _tuple_chunk(n_out, d_out, c0, c1)
            X = mu + u_val[digits][:, :, None] + v_val[None, None, :]
            total = _single_outcome_logliks(X, Ct, Yt, log_w_in)
            total += w_sum
            parts.append(_lse_last(total[None, :])[0])
        return np.array([logsumexp(parts)])

    columns = _column_patterns(C, Ysums)
    max_pat = max(p.shape[0] for _r, _c, p, _i in columns)
    chunk = _pick_chunk(d_out, v_val.shape[0], max_pat)
    n_chunks = (T + chunk - 1) // chunk
    parts = np.empty((B, n_chunks))
    block = int(max(1, min(B, 20_000_000 // chunk)))
    for ci in range(n_chunks):
        c0, c1 = ci * chunk, min((ci + 1) * chunk, T)
        digits, w_sum = _tuple_chunk(n_out, d_out, c0, c1)
        X = mu + u_val[digits][:, :, None] + v_val[None, None, :]
        logI = _chunk_column_logI(X, columns, log_w_in)
        for b0 in range(0, B, block):
            b1 = min(b0 + block, B)
            G = np.broadcast_to(w_sum, (b1 - b0, c1 - c0)).copy()
            for (_rows, _counts, _patterns, inverse), logI_b in zip(columns, logI):
                G += logI_b[inverse[b0:b1], :]
            parts[b0:b1, ci] = _lse_last(G)
    return logsumexp(parts, axis=1)


def marginal_loglik_exact(
    data: ResponseTable,
    theta: Theta,
    order: int = DEFAULT_ORDER,
    cap: int = TENSOR_CAP,
) -> LikelihoodValue:
    """Exact-quadrature log marginal probability of the full table.

    Deterministic; raises `TensorCapError` when the outer tensor product
    would exceed ``cap`` nodes (defer to `marginal_loglik_mc` in that case).
    """
    if not data.y:
        raise ValueError("empty response table")
    Ysums = data.cell_sum_matrix()[None, :, :]
    value = log_marginal_outcomes(data.design, theta, Ysums, order=order, cap=cap)
    d_out = min(data.design.m, data.design.n)
    var_out = theta.sigma2 if data.design.m <= data.design.n else theta.tau2
    evals = (1 if var_out == 0.0 else order) ** d_out
    return LikelihoodValue(loglik=float(value[0]), method=EXACT, evaluations=evals)


def marginal_loglik_mc(
    data: ResponseTable,
    theta: Theta,
    draws: int,
    seed: int,
    order: int = DEFAULT_ORDER,
) -> LikelihoodValue:
    """Monte-Carlo log marginal probability: outer effects sampled, inner
    quadrature per column as in the exact path.

    The returned ``mc_std_error`` is the delta-method standard error of the
    log of the Monte-Carlo mean (sd of the draws divided by sqrt(draws)
    times the mean).  Deterministic given ``seed``.
    """
    if draws < 100:
        raise ValueError(f"need at least 100 draws, got {draws}")
    C, var_out, var_in, transposed = _orient(data.design, theta)
    Ysum = _oriented_cell_sums(data.cell_sum_matrix(), transposed)
    Ct = np.ascontiguousarray(C.T)
    Yt = np.ascontiguousarray(Ysum.T)
    d_out = C.shape[0]
    v_val, log_w_in = _nodes_for(var_in, order)

    rng = np.random.default_rng(seed)
    u = math.sqrt(var_out) * rng.standard_normal((draws, d_out))
    logL = np.empty(draws)
    chunk = _pick_chunk(d_out, v_val.shape[0], 1)
    for r0 in range(0, draws, chunk):
        r1 = min(r0 + chunk, draws)
        X = theta.mu + u[r0:r1][:, :, None] + v_val[None, None, :]
        logL[r0:r1] = _single_outcome_logliks(X, Ct, Yt, log_w_in)
    shift = logL.max()
    a = np.exp(logL - shift)
    mean_a = a.mean()
    se = float(a.std(ddof=1) / (math.sqrt(draws) * mean_a))
    return LikelihoodValue(
        loglik=float(shift + np.log(mean_a)),
        method=MONTE_CARLO,
        evaluations=draws,
        mc_std_error=se,
    )


# ---------------------------------------------------------------------------
# Scalar functions and subset likelihoods
# ---------------------------------------------------------------------------


def p0(lam: float, psi2: float, order: int = DEFAULT_ORDER) -> float:
    """Marginal success probability E h(lam + xi), xi ~ N(0, psi2)."""
    if psi2 < 0:
        raise ValueError("psi2 must be nonnegative")
    x, log_w = _nodes_for(psi2, order)
    return float(np.exp(logsumexp(log_w + log_expit(lam + x))))


def m_function(mu: float, psi2: float, order: int = DEFAULT_ORDER) -> tuple[float, float]:
    """(M1, M2) = (E h(mu + psi*z), E h^2(mu + psi*z)) for z ~ N(0, 1)."""
    if psi2 <= 0:
        raise ValueError("psi2 must be positive")
    x, log_w = _nodes_for(psi2, order)
    lh = log_expit(mu + x)
    m1 = float(np.exp(logsumexp(log_w + lh)))
    m2 = float(np.exp(logsumexp(log_w + 2.0 * lh)))
    return m1, m2


def replicate_pair_masses(mu: float, psi2: float, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Masses q_k = E[ exp(k(mu+xi)) / (1+exp(mu+xi))^2 ] for k = 0, 1, 2.

    q_k is the probability of a diagonal replicate pair with response sum k;
    the four pair outcomes have masses (q0, q1, q1, q2) and sum to one.
    """
    x, log_w = _nodes_for(psi2, order)
    lh = log_expit(mu + x)
    lm = log_expit(-(mu + x))
    return np.array(
        [float(np.exp(logsumexp(log_w + k * lh + (2 - k) * lm))) for k in (0, 1, 2)]
    )


def offdiag_pair_masses(
    mu: float, psi2: float, gamma: float, order: int = DEFAULT_ORDER
) -> np.ndarray:
    """2x2 outcome masses of an off-diagonal pair sharing a row effect.

    ``masses[y1, y2] = E[ f(y1; mu+X) f(y2; mu+Y) ]`` with (X, Y) centered
    bivariate normal, var X = var Y = psi2, cor(X, Y) = gamma.
    """
    if psi2 <= 0:
        raise ValueError("psi2 must be positive")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    rule = gauss_hermite(order)
    s = math.sqrt(psi2)
    z1 = rule.nodes[:, None]
    z2 = rule.nodes[None, :]
    x = np.broadcast_to(s * z1, (order, order))
    y = s * (gamma * z1 + math.sqrt(max(0.0, 1.0 - gamma * gamma)) * z2)
    w = rule.weights[:, None] * rule.weights[None, :]
    masses = np.empty((2, 2))
    for y1 in (0, 1):
        fx = log_expit(mu + x) if y1 == 1 else log_expit(-(mu + x))
        for y2 in (0, 1):
            fy = log_expit(mu + y) if y2 == 1 else log_expit(-(mu + y))
            masses[y1, y2] = float(np.sum(w * np.exp(fx + fy)))
    return masses


def p_gamma_11(
    gamma: float, mu0: float, psi2_0: float, order: int = DEFAULT_ORDER
) -> float:
    """The (1,1) outcome mass of an off-diagonal pair, E[h(mu0+X) h(mu0+Y)]."""
    return float(offdiag_pair_masses(mu0, psi2_0, gamma, order=order)[1, 1])


def _require_elements(spec: SubsetSpec) -> SubsetSpec:
    if spec.count == 0:
        raise ValueError(f"subset {spec.kind.value} is empty for this design")
    return spec


def subset_diag_loglik(
    data: ResponseTable, theta: Theta, order: int = DEFAULT_ORDER
) -> LikelihoodValue:
    """Bernoulli(p0) log-likelihood of the diagonal subset y_ii, k = 1."""
    spec = _require_elements(SubsetSpec.resolve(SubsetKind.DIAGONAL, data.design))
    p = p0(theta.mu, theta.psi2, order=order)
    total = 0.0
    for (key,) in spec.elements:
        total += math.log(p) if data.y[key] == 1 else math.log1p(-p)
    return LikelihoodValue(loglik=total, method=EXACT, evaluations=order)


def subset_pair_loglik(
    data: ResponseTable, theta: Theta, order: int = DEFAULT_ORDER
) -> LikelihoodValue:
    """Log-likelihood of the diagonal replicate pairs (cells with c_ii = 2).

    Each pair's probability depends on theta only through (mu, psi2).
    """
    spec = _require_elements(
        SubsetSpec.resolve(SubsetKind.REPLICATE_PAIR_DIAGONAL, data.design)
    )
    q = replicate_pair_masses(theta.mu, theta.psi2, order=order)
    total = 0.0
    for element in spec.elements:
        ysum = sum(data.y[key] for key in element)
        total += math.log(q[ysum])
    return LikelihoodValue(loglik=total, method=EXACT, evaluations=order)


def offdiag_pair_loglik(
    data: ResponseTable, theta: Theta, order: int = DEFAULT_ORDER
) -> LikelihoodValue:
    """Log-likelihood of the off-diagonal pairs (y_{i,2i-1,1}, y_{i,2i,1}).

    The two members share the row effect u_i, giving correlation
    gamma = sigma2 / psi2 between their latent predictors.
    """
    spec = _require_elements(SubsetSpec.resolve(SubsetKind.OFF_DIAGONAL_PAIR, data.design))
    masses = offdiag_pair_masses(theta.mu, theta.psi2, theta.gamma, order=order)
    total = 0.0
    for (k1, k2) in spec.elements:
        total += math.log(masses[data.y[k1], data.y[k2]])
    return LikelihoodValue(loglik=total, method=EXACT, evaluations=order * order)


def loglik_gradient_fd(
    data: ResponseTable,
    theta: Theta,
    step: float = 1e-4,
    order: int = DEFAULT_ORDER,
    cap: int = TENSOR_CAP,
) -> np.ndarray:
    """Central-difference gradient of the exact log-likelihood.

    Components follow the free parameters in canonical order, with variance
    parameters differentiated on the log scale.  ``theta`` must sit at least
    ``step`` inside the working-scale parameter box.
    """
    z = working_values(theta)
    for zc, (lo, hi) in zip(z, working_bounds(theta)):
        if not (lo + step <= zc <= hi - step):
            raise ValueError(
                "theta must be interior to the parameter box by at least one step"
            )
    grad = np.empty(z.shape[0])
    for c in range(z.shape[0]):
        zp = z.copy()
        zp[c] += step
        zm = z.copy()
        zm[c] -= step
        fp = marginal_loglik_exact(data, theta_from_working(theta, zp), order=order, cap=cap)
        fm = marginal_loglik_exact(data, theta_from_working(theta, zm), order=order, cap=cap)
        grad[c] = (fp.loglik - fm.loglik) / (2.0 * step)
    return grad
