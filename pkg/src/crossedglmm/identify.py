"""Numerical identification checks for the two-subset estimation scheme.

Each subset element has a small finite outcome space, so Kullback-Leibler
divergences between parameter points are exact finite sums over element
masses.  The checks here certify, on finite grids:

* the KL of each subset is nonpositive and strictly negative whenever the
  subset can see the parameter change ("either the replicate-pair KL or the
  off-diagonal-pair KL is negative" away from the truth);
* the map theta -> (M1, M2) = (E h, E h^2) separates points (injectivity on
  a grid, reported as a minimum separation ratio);
* the (1,1) outcome mass of an off-diagonal pair is strictly increasing in
  the latent correlation gamma (Slepian monotonicity).

Grid checks are certificates for the grid, not proofs; densities are knobs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import SubsetKind, Theta
from .likelihood import (
    m_function,
    offdiag_pair_masses,
    p0,
    p_gamma_11,
    replicate_pair_masses,
)
from .quadrature import DEFAULT_ORDER

__all__ = [
    "KlReport",
    "B2Report",
    "InjectivityReport",
    "SlepianReport",
    "element_masses",
    "kl_subset",
    "check_b2_grid",
    "check_m_injective",
    "check_slepian_monotone",
]


def element_masses(theta: Theta, kind: SubsetKind, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Outcome masses of one subset element (finite support, sums to one)."""
    if kind is SubsetKind.DIAGONAL:
        p = p0(theta.mu, theta.psi2, order=order)
        return np.array([1.0 - p, p])
    if kind is SubsetKind.REPLICATE_PAIR_DIAGONAL:
        q = replicate_pair_masses(theta.mu, theta.psi2, order=order)
        return np.array([q[0], q[1], q[1], q[2]])
    if kind is SubsetKind.OFF_DIAGONAL_PAIR:
        return offdiag_pair_masses(theta.mu, theta.psi2, theta.gamma, order=order).ravel()
    raise ValueError(f"unknown subset kind {kind}")  # pragma: no cover


@dataclass(frozen=True)
class KlReport:
    """Per-element KL divergence E_theta0 log(p_theta / p_theta0) <= 0."""

    theta: Theta
    theta0: Theta
    kind: SubsetKind
    kl: float
    coincide: bool  # the two outcome distributions match to 1e-10


def kl_subset(
    theta: Theta, theta0: Theta, kind: SubsetKind, order: int = DEFAULT_ORDER
) -> KlReport:
    """Exact finite-sum KL of one subset element between two parameters."""
    if kind is not SubsetKind.DIAGONAL:
        if theta.psi2 <= 0 or theta0.psi2 <= 0:
            raise ValueError("pair subsets require psi2 > 0 on both parameters")
    p = element_masses(theta, kind, order=order)
    q = element_masses(theta0, kind, order=order)
    kl = float(np.sum(q * (np.log(p) - np.log(q))))
    return KlReport(
        theta=theta,
        theta0=theta0,
        kind=kind,
        kl=kl,
        coincide=bool(np.max(np.abs(p - q)) < 1e-10),
    )


@dataclass(frozen=True)
class B2Point:
    theta: Theta
    kl_replicate_pair: float
    kl_offdiag_pair: float

    @property
    def min_kl(self) -> float:
        return min(self.kl_replicate_pair, self.kl_offdiag_pair)


@dataclass(frozen=True)
class B2Report:
    """KL negativity over an annulus grid around the true parameter.

    Passes when every grid point in epsilon <= |theta - theta0| <= M has at
    least one strictly negative subset KL; ``delta`` is the certified
    margin (the negative of the worst min-KL).
    """

    theta0: Theta
    epsilon: float
    m_radius: float
    points: tuple[B2Point, ...]
    skipped: int

    @property
    def worst(self) -> B2Point:
        return max(self.points, key=lambda pt: pt.min_kl)

    @property
    def delta(self) -> float:
        return -self.worst.min_kl

    @property
    def passed(self) -> bool:
        return self.delta > 0.0

    def to_csv(self) -> str:
        lines = ["mu,sigma2,tau2,kl_replicate_pair,kl_offdiag_pair,min_kl,pass"]
        for pt in self.points:
            ok = 1 if pt.min_kl < 0 else 0
            lines.append(
                f"{pt.theta.mu:.17g},{pt.theta.sigma2:.17g},{pt.theta.tau2:.17g},"
                f"{pt.kl_replicate_pair:.17g},{pt.kl_offdiag_pair:.17g},"
                f"{pt.min_kl:.17g},{ok}"
            )
        return "\n".join(lines) + "\n"


def check_b2_grid(
    theta0: Theta,
    epsilon: float,
    M: float,
    grid_density: int,
    order: int = DEFAULT_ORDER,
) -> B2Report:
    """Evaluate both subset KLs over a grid annulus around theta0.

    The grid spans theta0 +/- M per coordinate with ``grid_density`` points
    per axis, keeping points with epsilon <= |theta - theta0| <= M
    (Euclidean).  Grid points with nonpositive variances are skipped and
    counted.  Requires strictly positive true variances.
    """
    if theta0.sigma2 <= 0 or theta0.tau2 <= 0:
        raise ValueError("identification requires positive true variances")
    if epsilon > M:
        raise ValueError(f"empty annulus: epsilon {epsilon} exceeds M {M}")
    if grid_density < 1:
        raise ValueError("grid density must be positive")
    axes = [
        np.linspace(c - M, c + M, grid_density)
        for c in (theta0.mu, theta0.sigma2, theta0.tau2)
    ]
    points: list[B2Point] = []
    skipped = 0
    center = np.array([theta0.mu, theta0.sigma2, theta0.tau2])
    for mu in axes[0]:
        for s2 in axes[1]:
            for t2 in axes[2]:
                dist = float(np.linalg.norm(np.array([mu, s2, t2]) - center))
                if not epsilon <= dist <= M:
                    continue
                if s2 < 0 or t2 < 0 or s2 + t2 <= 0:
                    skipped += 1
                    continue
                th = Theta(float(mu), float(s2), float(t2))
                points.append(
                    B2Point(
                        theta=th,
                        kl_replicate_pair=kl_subset(
                            th, theta0, SubsetKind.REPLICATE_PAIR_DIAGONAL, order=order
                        ).kl,
                        kl_offdiag_pair=kl_subset(
                            th, theta0, SubsetKind.OFF_DIAGONAL_PAIR, order=order
                        ).kl,
                    )
                )
    if not points:
        raise ValueError("empty annulus: no grid points satisfy the distance bounds")
    return B2Report(
        theta0=theta0, epsilon=epsilon, m_radius=M, points=tuple(points), skipped=skipped
    )


@dataclass(frozen=True)
class InjectivityReport:
    """Minimum separation of (M1, M2) relative to parameter distance."""

    mu_values: np.ndarray
    psi2_values: np.ndarray
    min_ratio: float
    n_pairs: int
    vacuous: bool

    @property
    def passed(self) -> bool:
        return self.vacuous or self.min_ratio > 0.0

    def to_csv(self) -> str:
        header = "min_separation_ratio,n_pairs,vacuous,pass"
        return (
            header
            + "\n"
            + f"{self.min_ratio:.17g},{self.n_pairs},{int(self.vacuous)},{int(self.passed)}\n"
        )


def check_m_injective(
    mu_range: tuple[float, float],
    psi2_range: tuple[float, float],
    density: int,
    order: int = DEFAULT_ORDER,
) -> InjectivityReport:
    """Grid certificate that (mu, psi2) -> (M1, M2) separates points.

    Reports min over distinct grid pairs of ||M - M'|| / ||theta - theta'||
    in the (mu, psi2) coordinates; a single-point grid passes vacuously.
    """
    if psi2_range[0] <= 0:
        raise ValueError("psi2 range must be positive")
    mus = np.linspace(mu_range[0], mu_range[1], density)
    psi2s = np.linspace(psi2_range[0], psi2_range[1], density)
    pts = np.array([(m, p) for m in mus for p in psi2s])
    if pts.shape[0] < 2:
        return InjectivityReport(
            mu_values=mus, psi2_values=psi2s, min_ratio=math.inf, n_pairs=0, vacuous=True
        )
    M = np.array([m_function(m, p, order=order) for m, p in pts])
    diff_m = M[:, None, :] - M[None, :, :]
    diff_t = pts[:, None, :] - pts[None, :, :]
    num = np.linalg.norm(diff_m, axis=2)
    den = np.linalg.norm(diff_t, axis=2)
    iu = np.triu_indices(pts.shape[0], k=1)
    ratios = num[iu] / den[iu]
    return InjectivityReport(
        mu_values=mus,
        psi2_values=psi2s,
        min_ratio=float(ratios.min()),
        n_pairs=int(ratios.shape[0]),
        vacuous=False,
    )


@dataclass(frozen=True)
class SlepianReport:
    """Strict monotonicity of the (1,1) pair mass along a gamma grid."""

    mu0: float
    psi2_0: float
    gamma_grid: np.ndarray
    p11_values: np.ndarray
    margin: float  # smallest neighbor increase (inf when vacuous)
    vacuous: bool

    @property
    def passed(self) -> bool:
        return self.vacuous or self.margin > 1e-10

    def to_csv(self) -> str:
        lines = ["gamma,p11,increase_from_prev,pass"]
        prev = None
        for g, v in zip(self.gamma_grid, self.p11_values):
            inc = "" if prev is None else f"{v - prev:.17g}"
            ok = 1 if prev is None or v - prev > 1e-10 else 0
            lines.append(f"{g:.17g},{v:.17g},{inc},{ok}")
            prev = v
        return "\n".join(lines) + "\n"


def check_slepian_monotone(
    mu0: float,
    psi2_0: float,
    gamma_grid,
    order: int = DEFAULT_ORDER,
) -> SlepianReport:
    """Verify p_gamma(1,1) strictly increases along a sorted gamma grid."""
    grid = np.asarray(gamma_grid, dtype=float)
    if grid.size and (grid.min() < 0.0 or grid.max() > 1.0):
        raise ValueError("gamma grid must lie in [0, 1]")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("gamma grid must be strictly increasing")
    values = np.array([p_gamma_11(g, mu0, psi2_0, order=order) for g in grid])
    if grid.size < 2:
        return SlepianReport(
            mu0=mu0,
            psi2_0=psi2_0,
            gamma_grid=grid,
            p11_values=values,
            margin=math.inf,
            vacuous=True,
        )
    margin = float(np.min(np.diff(values)))
    return SlepianReport(
        mu0=mu0,
        psi2_0=psi2_0,
        gamma_grid=grid,
        p11_values=values,
        margin=margin,
        vacuous=False,
    )
