"""Text formats: response-table CSV, theta key=value files, plain configs.

Data CSV has the header ``i,j,k,y`` with 1-based indices; the design is
inferred from the rows (m = max i, n = max j, c_ij = max k per cell).

Theta files are ``key=value`` lines: ``mu=...``, ``sigma2=...``,
``tau2=...`` and ``free=mu|sigma2|tau2`` (a ``|``-separated name list).

Config files are one ``key = value`` per line, ``#`` starts a comment,
list values are ``|``-separated.  Values stay strings; callers convert.
"""

from __future__ import annotations

from .model import CrossedDesign, ResponseTable, Theta, PARAM_NAMES

__all__ = [
    "ConfigError",
    "format_theta",
    "parse_theta_text",
    "parse_theta_triple",
    "format_data_csv",
    "parse_data_csv",
    "parse_config",
]


class ConfigError(ValueError):
    """A config file, theta file or CLI value could not be parsed."""


def format_theta(theta: Theta) -> str:
    free = "|".join(theta.free_names())
    return (
        f"mu={theta.mu:.17g}\n"
        f"sigma2={theta.sigma2:.17g}\n"
        f"tau2={theta.tau2:.17g}\n"
        f"free={free}\n"
    )


def parse_theta_text(text: str) -> Theta:
    values: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value in theta file, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    try:
        mu = float(values["mu"])
        sigma2 = float(values["sigma2"])
        tau2 = float(values["tau2"])
    except KeyError as err:
        raise ConfigError(f"theta file is missing {err.args[0]!r}") from None
    except ValueError as err:
        raise ConfigError(f"bad numeric value in theta file: {err}") from None
    free = frozenset(
        name for name in values.get("free", "mu|sigma2|tau2").split("|") if name
    )
    bad = free - set(PARAM_NAMES)
    if bad:
        raise ConfigError(f"unknown free parameter names: {sorted(bad)}")
    return Theta(mu=mu, sigma2=sigma2, tau2=tau2, free=free)


def parse_theta_triple(text: str, free: frozenset[str] | None = None) -> Theta:
    """Parse ``mu,sigma2,tau2`` (e.g. a ``--theta0 "0.5,1,1"`` flag value)."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected mu,sigma2,tau2 — got {text!r}")
    try:
        mu, sigma2, tau2 = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"non-numeric theta value in {text!r}") from None
    try:
        return Theta(
            mu=mu,
            sigma2=sigma2,
            tau2=tau2,
            free=free if free is not None else frozenset(PARAM_NAMES),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None


def format_data_csv(data: ResponseTable) -> str:
    lines = ["i,j,k,y"]
    for (i, j, k) in data.design.observation_keys():
        lines.append(f"{i},{j},{k},{data.y[(i, j, k)]}")
    return "\n".join(lines) + "\n"


def parse_data_csv(text: str) -> ResponseTable:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines or lines[0].replace(" ", "") != "i,j,k,y":
        raise ConfigError("data CSV must start with the header 'i,j,k,y'")
    y: dict[tuple[int, int, int], int] = {}
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 4:
            raise ConfigError(f"bad data row {line!r}")
        try:
            i, j, k, value = (int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"non-integer field in data row {line!r}") from None
        if (i, j, k) in y:
            raise ConfigError(f"duplicate observation ({i},{j},{k})")
        y[(i, j, k)] = value
    if not y:
        raise ConfigError("data CSV has no observations")
    m = max(i for (i, _j, _k) in y)
    n = max(j for (_i, j, _k) in y)
    cells: dict[tuple[int, int], int] = {}
    for (i, j, k) in y:
        cells[(i, j)] = max(cells.get((i, j), 0), k)
    try:
        design = CrossedDesign(m=m, n=n, cells=cells)
        return ResponseTable(design=design, y=y)
    except ValueError as err:
        raise ConfigError(f"inconsistent data CSV: {err}") from None


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out
