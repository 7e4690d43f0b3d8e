"""Command-line interface.

Subcommands: simulate, fit, subset-fit, dc-fit, finite-fit, info-loss,
check-subset, identify, study, limiting-demo.  Each subcommand reads an
optional ``--config`` file (plain ``key = value`` lines, ``#`` comments,
``|``-separated lists) plus flag overrides, writes CSV to ``--out`` (or to
stdout when no path is given) and prints a one-line summary.

Exit status: 0 on success, 2 on configuration/usage errors, 3 when a
verification subcommand reports a failed check.  Output is byte-identical
across runs with the same seed and configuration; the ``--threads`` flag is
accepted for interface stability but execution is always sequential (the
row order is deterministic either way).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .estimators import CloneConfig, fit_dc_mle, fit_finite_mle, fit_full_mle, fit_subset_mle
from .harness import (
    StudyConfig,
    derive_seed,
    limiting_demo,
    limiting_to_csv,
    make_design,
    run_study,
    simulate,
    study_to_csv,
)
from .identify import check_b2_grid, check_m_injective, check_slepian_monotone
from .information import check_subset_inequality, info_loss
from .io import (
    ConfigError,
    format_data_csv,
    parse_config,
    parse_data_csv,
    parse_theta_triple,
)
from .model import PARAM_NAMES, SubsetKind, SubsetSpec, Theta
from .quadrature import DEFAULT_ORDER

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK_FAILED = 3

_SUBSET_NAMES = {kind.value: kind for kind in SubsetKind}


class CheckFailure(Exception):
    """A verification subcommand found a violated property."""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossedglmm",
        description="Crossed-random-effects mixed logistic model tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    names = (
        "simulate",
        "fit",
        "subset-fit",
        "dc-fit",
        "finite-fit",
        "info-loss",
        "check-subset",
        "identify",
        "study",
        "limiting-demo",
    )
    for name in names:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--out", default=None, help="output CSV path (default: stdout)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None, help="accepted; runs sequentially")
        p.add_argument("--m", type=int, default=None)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--theta0", default=None, help="mu,sigma2,tau2")
        p.add_argument("--theta", default=None, help="mu,sigma2,tau2")
        p.add_argument("--K", type=int, default=None)
        p.add_argument("--B", type=int, default=None)
        p.add_argument("--reps", type=int, default=None)
        p.add_argument("--data", default=None, help="data CSV path")
    return parser


def _load_config(args: argparse.Namespace) -> dict[str, str]:
    cfg: dict[str, str] = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = parse_config(path.read_text())
    overrides = {
        "seed": args.seed,
        "m": args.m,
        "n": args.n,
        "theta0": args.theta0,
        "theta": args.theta,
        "K": args.K,
        "B": args.B,
        "replications": args.reps,
        "data": args.data,
        "out": args.out,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = str(value)
    return cfg


def _get(cfg: dict[str, str], key: str, default: str | None = None) -> str:
    if key in cfg:
        return cfg[key]
    if default is not None:
        return default
    raise ConfigError(f"missing required config key {key!r}")


def _get_int(cfg, key, default=None):
    raw = _get(cfg, key, default)
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r} must be an integer, got {raw!r}") from None


def _get_float(cfg, key, default=None):
    raw = _get(cfg, key, default)
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r} must be a number, got {raw!r}") from None


def _free_mask(cfg: dict[str, str], default: str = "mu|sigma2|tau2") -> frozenset[str]:
    names = frozenset(n for n in _get(cfg, "free", default).split("|") if n)
    bad = names - set(PARAM_NAMES)
    if bad:
        raise ConfigError(f"unknown free parameter names: {sorted(bad)}")
    if not names:
        raise ConfigError("free parameter list is empty")
    return names


def _theta_from(cfg: dict[str, str], key: str, free: frozenset[str]) -> Theta:
    return parse_theta_triple(_get(cfg, key), free=free)


def _subset_kind(cfg: dict[str, str]) -> SubsetKind:
    name = _get(cfg, "subset", "diagonal")
    if name not in _SUBSET_NAMES:
        raise ConfigError(f"unknown subset kind {name!r}; options: {sorted(_SUBSET_NAMES)}")
    return _SUBSET_NAMES[name]


def _read_data(cfg: dict[str, str]):
    path = Path(_get(cfg, "data"))
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    return parse_data_csv(path.read_text())


def _emit(cfg: dict[str, str], csv_text: str, summary: str) -> None:
    out = cfg.get("out")
    if out:
        Path(out).write_text(csv_text)
        print(summary)
    else:
        sys.stderr.write(summary + "\n")
        sys.stdout.write(csv_text)


def _fit_csv(result) -> str:
    lines = ["parameter,estimate,loglik,converged,evaluations,method"]
    for name in result.theta_hat.free_names():
        lines.append(
            f"{name},{getattr(result.theta_hat, name):.17g},{result.loglik:.17g},"
            f"{int(result.converged)},{result.evaluations},{result.method}"
        )
    return "\n".join(lines) + "\n"


def _cmd_simulate(cfg: dict[str, str]) -> int:
    theta0 = _theta_from(cfg, "theta0", _free_mask(cfg))
    m, n = _get_int(cfg, "m"), _get_int(cfg, "n")
    seed = _get_int(cfg, "seed", "0")
    rule = _get(cfg, "design_rule", "full_crossing")
    data = simulate(rule, m, n, theta0, seed)
    mean = float(np.mean(list(data.y.values())))
    _emit(
        cfg,
        format_data_csv(data),
        f"simulate: {rule} {m}x{n}, N={data.design.total_observations}, "
        f"mean(y)={mean:.4f}, seed={seed}",
    )
    return EXIT_OK


def _cmd_fit(cfg: dict[str, str]) -> int:
    data = _read_data(cfg)
    theta0 = _theta_from(cfg, "theta0", _free_mask(cfg))
    method = _get(cfg, "method", "quadrature")
    order = _get_int(cfg, "order", str(DEFAULT_ORDER))
    result = fit_full_mle(
        data,
        theta0,
        method=method,
        order=order,
        draws=_get_int(cfg, "draws", "400"),
        seed=_get_int(cfg, "seed", "0"),
    )
    _emit(
        cfg,
        _fit_csv(result),
        f"fit: method={result.method} loglik={result.loglik:.6f} "
        f"converged={result.converged}",
    )
    return EXIT_OK


def _cmd_subset_fit(cfg: dict[str, str]) -> int:
    data = _read_data(cfg)
    theta0 = _theta_from(cfg, "theta0", _free_mask(cfg))
    result = fit_subset_mle(data, theta0, order=_get_int(cfg, "order", str(DEFAULT_ORDER)))
    _emit(
        cfg,
        _fit_csv(result),
        f"subset-fit: method={result.method} loglik={result.loglik:.6f}",
    )
    return EXIT_OK


def _cmd_dc_fit(cfg: dict[str, str]) -> int:
    from .harness import default_clone_config

    data = _read_data(cfg)
    theta0 = _theta_from(cfg, "theta0", _free_mask(cfg))
    clone_cfg = default_clone_config(
        data,
        theta0,
        K=_get_int(cfg, "K", "64"),
        B=_get_int(cfg, "B", "1000"),
        burn_in=_get_int(cfg, "burn_in", "500"),
        seed=_get_int(cfg, "seed", "0"),
        order=_get_int(cfg, "order", str(DEFAULT_ORDER)),
    )
    result = fit_dc_mle(data, clone_cfg)
    lines = ["parameter,posterior_mean,scaled_variance,acceptance_rate,ess"]
    for c, name in enumerate(result.posterior_mean.free_names()):
        ess = result.chain_summary["ess"][name]
        lines.append(
            f"{name},{getattr(result.posterior_mean, name):.17g},"
            f"{result.scaled_cov[c, c]:.17g},{result.acceptance_rate:.17g},{ess:.17g}"
        )
    _emit(
        cfg,
        "\n".join(lines) + "\n",
        f"dc-fit: K={clone_cfg.K} B={clone_cfg.B} "
        f"acceptance={result.acceptance_rate:.3f}",
    )
    return EXIT_OK


def _cmd_finite_fit(cfg: dict[str, str]) -> int:
    data = _read_data(cfg)
    free = _free_mask(cfg)
    grid = [parse_theta_triple(part, free=free) for part in _get(cfg, "grid").split("|")]
    result = fit_finite_mle(
        data,
        grid,
        order=_get_int(cfg, "order", str(DEFAULT_ORDER)),
        draws=_get_int(cfg, "draws", "400"),
        seed=_get_int(cfg, "seed", "0"),
    )
    _emit(
        cfg,
        _fit_csv(result),
        f"finite-fit: chose mu={result.theta_hat.mu:g} sigma2={result.theta_hat.sigma2:g} "
        f"tau2={result.theta_hat.tau2:g} from {len(grid)} candidates",
    )
    return EXIT_OK


def _cmd_info_loss(cfg: dict[str, str]) -> int:
    theta = _theta_from(cfg, "theta0", _free_mask(cfg))
    design = make_design(
        _get(cfg, "design_rule", "full_crossing"), _get_int(cfg, "m"), _get_int(cfg, "n")
    )
    subset = SubsetSpec.resolve(_subset_kind(cfg), design)
    matrices = info_loss(
        design, theta, subset, order=_get_int(cfg, "order", str(DEFAULT_ORDER))
    )
    lines = ["matrix,row,col,value"]
    for label, mat in (
        ("i_full", matrices.i_full),
        ("i_subset", matrices.i_subset),
        ("loss", matrices.loss),
    ):
        for r, rname in enumerate(matrices.names):
            for c, cname in enumerate(matrices.names):
                lines.append(f"{label},{rname},{cname},{mat[r, c]:.17g}")
    gap = float(np.max(np.abs(matrices.i_full - matrices.i_subset - matrices.loss)))
    _emit(
        cfg,
        "\n".join(lines) + "\n",
        f"info-loss: subset={subset.kind.value} identity gap={gap:.3e}",
    )
    return EXIT_OK


def _cmd_check_subset(cfg: dict[str, str]) -> int:
    free = _free_mask(cfg)
    theta0 = _theta_from(cfg, "theta0", free)
    theta = _theta_from(cfg, "theta", free)
    design = make_design(
        _get(cfg, "design_rule", "full_crossing"), _get_int(cfg, "m"), _get_int(cfg, "n")
    )
    subset = SubsetSpec.resolve(_subset_kind(cfg), design)
    lam = _get_float(cfg, "lambda", "1.0")
    report = check_subset_inequality(
        design,
        theta0,
        theta,
        subset,
        lambda_fn=lambda _y1: lam,
        order=_get_int(cfg, "order", str(DEFAULT_ORDER)),
    )
    _emit(
        cfg,
        report.to_csv(),
        f"check-subset: {'PASS' if report.passed else 'FAIL'} "
        f"max(lhs-rhs)={report.max_violation:.3e} over {len(report.rows)} subset values",
    )
    if not report.passed:
        raise CheckFailure("subset inequality violated")
    return EXIT_OK


def _cmd_identify(cfg: dict[str, str]) -> int:
    theta0 = _theta_from(cfg, "theta0", _free_mask(cfg))
    order = _get_int(cfg, "order", str(DEFAULT_ORDER))
    b2 = check_b2_grid(
        theta0,
        epsilon=_get_float(cfg, "epsilon", "0.2"),
        M=_get_float(cfg, "radius", "3.0"),
        grid_density=_get_int(cfg, "density", "7"),
        order=order,
    )
    lo, hi = (float(x) for x in _get(cfg, "mu_range", "-2,2").split(","))
    plo, phi = (float(x) for x in _get(cfg, "psi2_range", "0.25,4").split(","))
    inj = check_m_injective(
        (lo, hi), (plo, phi), _get_int(cfg, "inj_density", "15"), order=order
    )
    gammas = np.linspace(0.0, 1.0, _get_int(cfg, "gamma_points", "11"))
    slepian = check_slepian_monotone(theta0.mu, theta0.psi2, gammas, order=order)
    worst = b2.worst
    lines = [
        "check,detail,margin,pass",
        (
            f"b2_grid,worst mu={worst.theta.mu:.17g} sigma2={worst.theta.sigma2:.17g} "
            f"tau2={worst.theta.tau2:.17g},{b2.delta:.17g},{int(b2.passed)}"
        ),
        (
            f"m_injective,{len(inj.mu_values)}x{len(inj.psi2_values)} grid,"
            f"{inj.min_ratio:.17g},{int(inj.passed)}"
        ),
        (
            f"slepian,{gammas.shape[0]}-point gamma grid,"
            f"{slepian.margin:.17g},{int(slepian.passed)}"
        ),
    ]
    all_pass = b2.passed and inj.passed and slepian.passed
    _emit(
        cfg,
        "\n".join(lines) + "\n",
        f"identify: {'PASS' if all_pass else 'FAIL'} "
        f"(b2 delta={b2.delta:.3e}, injectivity ratio={inj.min_ratio:.3e}, "
        f"slepian margin={slepian.margin:.3e})",
    )
    if not all_pass:
        raise CheckFailure("identification checks failed")
    return EXIT_OK


def _parse_sizes(raw: str) -> tuple[tuple[int, int], ...]:
    sizes = []
    for part in raw.split("|"):
        part = part.strip()
        if "x" not in part:
            raise ConfigError(f"sizes must look like '5x5|10x10', got {part!r}")
        ms, ns = part.split("x", 1)
        try:
            sizes.append((int(ms), int(ns)))
        except ValueError:
            raise ConfigError(f"bad size {part!r}") from None
    return tuple(sizes)


def _cmd_study(cfg: dict[str, str]) -> int:
    free = _free_mask(cfg, default="mu")
    theta0 = _theta_from(cfg, "theta0", free)
    grid = ()
    if "grid" in cfg:
        grid = tuple(parse_theta_triple(p, free=free) for p in cfg["grid"].split("|"))
    try:
        study = StudyConfig(
            sizes=_parse_sizes(_get(cfg, "sizes", "5x5|10x10|20x20")),
            replications=_get_int(cfg, "replications", "10"),
            theta0=theta0,
            estimators=tuple(_get(cfg, "estimators", "subset|full_mc").split("|")),
            base_seed=_get_int(cfg, "seed", "0"),
            design_rule=_get(cfg, "design_rule", "full_crossing"),
            order=_get_int(cfg, "order", str(DEFAULT_ORDER)),
            draws=_get_int(cfg, "draws", "400"),
            dc_clones=_get_int(cfg, "K", "64"),
            dc_draws=_get_int(cfg, "B", "1000"),
            dc_burn_in=_get_int(cfg, "burn_in", "500"),
            grid=grid,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None
    rows = run_study(study)
    n_ok = sum(1 for r in rows if r.status == "ok")
    _emit(
        cfg,
        study_to_csv(rows),
        f"study: {len(rows)} rows ({n_ok} ok) over sizes "
        f"{'|'.join(f'{m}x{n}' for m, n in study.sizes)}, seed={study.base_seed}",
    )
    return EXIT_OK


def _cmd_limiting_demo(cfg: dict[str, str]) -> int:
    ladder = [int(p) for p in _get(cfg, "n_ladder", "10|100|1000").split("|")]
    rows = limiting_demo(
        m_fixed=_get_int(cfg, "m", "1"),
        n_ladder=ladder,
        replications=_get_int(cfg, "replications", "500"),
        seed=_get_int(cfg, "seed", "0"),
    )
    tail = rows[-1]
    _emit(
        cfg,
        limiting_to_csv(rows),
        f"limiting-demo: m={tail.m}, final n={tail.n}, "
        f"empirical var={tail.var_empirical:.4f} vs analytic {tail.var_analytic:.4f}",
    )
    return EXIT_OK


_HANDLERS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "subset-fit": _cmd_subset_fit,
    "dc-fit": _cmd_dc_fit,
    "finite-fit": _cmd_finite_fit,
    "info-loss": _cmd_info_loss,
    "check-subset": _cmd_check_subset,
    "identify": _cmd_identify,
    "study": _cmd_study,
    "limiting-demo": _cmd_limiting_demo,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code) if err.code else EXIT_OK
    try:
        cfg = _load_config(args)
        return _HANDLERS[args.command](cfg)
    except ConfigError as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_CONFIG
    except CheckFailure as err:
        sys.stderr.write(f"check failed: {err}\n")
        return EXIT_CHECK_FAILED
    except ValueError as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
