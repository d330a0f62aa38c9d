"""INI run configuration.

Sections and keys (anything else is rejected)::

    [integrand]  family, dim, matrix, delta
    [grid]       cells, length
    [initial]    kind, amplitude, width, modes
    [time]       T, cfl_safety, sample_every
    [theorem]    id, M, R
    [budget]     direction_samples, s_grid, s_max, refine_iters
    [run]        seed, output

``T = auto`` (the default) runs to the theorem's window ``T'``. ``M`` and
``R`` default to the measured ``sup|u0|`` and a quarter of the period.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from . import initial as initial_mod
from . import integrand as integrand_mod
from .constants import SearchBudget
from .errors import ConfigError
from .initial import InitialData
from .integrand import Integrand
from .solver import GridSpec

SECTIONS = {
    "integrand": {"family", "dim", "matrix", "delta"},
    "grid": {"cells", "length"},
    "initial": {"kind", "amplitude", "width", "modes"},
    "time": {"t", "cfl_safety", "sample_every"},
    "theorem": {"id", "m", "r"},
    "budget": {"direction_samples", "s_grid", "s_max", "refine_iters"},
    "run": {"seed", "output"},
}
REQUIRED = ("integrand", "grid", "initial")
OUTPUT_FORMATS = ("binary", "csv")


@dataclass(frozen=True)
class RunConfig:
    integrand: Integrand
    grid: GridSpec
    initial: InitialData
    T: Optional[float]
    cfl_safety: float
    sample_every: int
    theorem: Optional[int]
    M: Optional[float]
    R: Optional[float]
    budget: SearchBudget
    seed: int
    output: str
    resolved: dict

    def with_seed(self, seed: int) -> "RunConfig":
        """Same configuration with every random stream re-seeded."""
        sections = {k: dict(v) for k, v in self.resolved.items()}
        sections.setdefault("run", {})["seed"] = str(seed)
        return from_sections(sections)


def _number(section: Mapping[str, str], key: str, kind, default, where: str):
    raw = section.get(key)
    if raw is None:
        return default
    try:
        value = kind(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {kind.__name__}", f"[{where}] {key}") from None
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError("value must be finite", f"[{where}] {key}")
    return value


def _optional_auto(section: Mapping[str, str], key: str, where: str) -> Optional[float]:
    raw = section.get(key, "auto").strip()
    if raw == "auto":
        return None
    return _number({key: raw}, key, float, None, where)


def from_sections(sections: Mapping[str, Mapping[str, str]]) -> RunConfig:
    """Validate raw ``{section: {key: value}}`` strings into a :class:`RunConfig`."""
    for name, body in sections.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]", f"[{name}]")
        unknown = set(body) - SECTIONS[name]
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)}", f"[{name}]")
    for name in REQUIRED:
        if name not in sections:
            raise ConfigError("missing required section", f"[{name}]")
    get = lambda name: sections.get(name, {})  # noqa: E731

    run = get("run")
    seed = _number(run, "seed", int, 0, "run")
    output = run.get("output", "binary").strip()
    if output not in OUTPUT_FORMATS:
        raise ConfigError(f"output must be one of {OUTPUT_FORMATS}", "[run] output")

    F = integrand_mod.from_config(get("integrand"))

    g = get("grid")
    cells = _number(g, "cells", int, 256, "grid")
    length = _number(g, "length", float, 2.0 * math.pi, "grid")
    try:
        grid = GridSpec(F.dim, cells, length)
    except ValueError as exc:
        raise ConfigError(str(exc), "[grid]") from None

    init = initial_mod.from_config(get("initial"), seed)

    tm = get("time")
    T = _optional_auto(tm, "t", "time")
    cfl = _number(tm, "cfl_safety", float, 0.9, "time")
    every = _number(tm, "sample_every", int, 100, "time")
    if T is not None and T < 0:
        raise ConfigError("T must be non-negative", "[time] T")
    if not 0 < cfl <= 1:
        raise ConfigError("cfl_safety must lie in (0, 1]", "[time] cfl_safety")
    if every < 1:
        raise ConfigError("sample_every must be >= 1", "[time] sample_every")

    th = get("theorem")
    theorem = None
    if "theorem" in sections:
        theorem = _number(th, "id", int, None, "theorem")
        if theorem not in (1, 2, 3):
            raise ConfigError("id must be 1, 2 or 3", "[theorem] id")
    M = _optional_auto(th, "m", "theorem")
    R = _optional_auto(th, "r", "theorem")
    if M is not None and not M > 0:
        raise ConfigError("M must be positive", "[theorem] M")
    if R is not None and not R > 0:
        raise ConfigError("R must be positive", "[theorem] R")
    if T is None and theorem is None:
        raise ConfigError("T = auto needs a [theorem] section", "[time] T")

    b = get("budget")
    defaults = SearchBudget()
    try:
        budget = SearchBudget(
            direction_samples=_number(b, "direction_samples", int, defaults.direction_samples, "budget"),
            s_grid=_number(b, "s_grid", int, defaults.s_grid, "budget"),
            s_max=_number(b, "s_max", float, defaults.s_max, "budget"),
            refine_iters=_number(b, "refine_iters", int, defaults.refine_iters, "budget"),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "[budget]") from None

    resolved = _resolve(sections, grid, init, T, cfl, every, theorem, M, R, budget, seed, output)
    return RunConfig(
        integrand=F,
        grid=grid,
        initial=init,
        T=T,
        cfl_safety=cfl,
        sample_every=every,
        theorem=theorem,
        M=M,
        R=R,
        budget=budget,
        seed=seed,
        output=output,
        resolved=resolved,
    )


def _resolve(sections, grid, init, T, cfl, every, theorem, M, R, budget, seed, output) -> dict:
    # every effective value, defaults included, as config strings
    auto = lambda v: "auto" if v is None else repr(v)  # noqa: E731
    out = {
        "integrand": {k: v.strip() for k, v in sections["integrand"].items()},
        "grid": {"cells": str(grid.cells), "length": repr(grid.L)},
        "initial": {
            "kind": init.kind,
            "amplitude": repr(init.amplitude),
            "width": repr(init.width),
            "modes": str(init.modes),
        },
        "time": {"t": auto(T), "cfl_safety": repr(cfl), "sample_every": str(every)},
        "budget": {
            "direction_samples": str(budget.direction_samples),
            "s_grid": str(budget.s_grid),
            "s_max": repr(budget.s_max),
            "refine_iters": str(budget.refine_iters),
        },
        "run": {"seed": str(seed), "output": output},
    }
    if theorem is not None:
        out["theorem"] = {"id": str(theorem), "m": auto(M), "r": auto(R)}
    return out


def parse(text: str) -> RunConfig:
    """Parse INI text; syntax errors surface as :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        message = exc.message.splitlines()[0]
        errors = getattr(exc, "errors", None)
        if errors and line is None:
            line, bad = errors[0]
            message = f"cannot parse {bad}"
        where = f"line {line}" if line else "config"
        raise ConfigError(message, where) from None
    return from_sections({name: dict(parser[name]) for name in parser.sections()})


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from None
    return parse(text)


def dump(resolved: Mapping[str, Mapping[str, str]]) -> str:
    """INI text for a resolved-config echo; sections and keys in sorted order."""
    lines = []
    for name in sorted(resolved):
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in sorted(resolved[name].items()))
        lines.append("")
    return "\n".join(lines)
