"""Run configuration: argv flags layered over a flat ``key = value`` file."""
from __future__ import annotations

import argparse
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

COMMANDS = ("exact", "simulate", "decompose", "ineq", "clt", "fclt", "regen", "all")
DEFAULT_SEED = 20240611
SEED_ENV = "REVCLT_SEED"

# n_grid used when neither n nor n_grid is given
DEFAULT_SIZES = {
    "exact": [10, 100, 1000, 10**4, 10**5, 10**6],
    "simulate": [10, 100, 1000],
    "decompose": [1000],
    "ineq": [10, 100, 1000],
    "clt": [1000, 10**4],
    "fclt": [10**4],
    "regen": [10**6],
    "all": [1000],
}


class UsageError(ValueError):
    """Bad flags or config file contents; the CLI maps this to exit code 64."""


@dataclass
class RunConfig:
    command: str
    n: int | None = None
    n_grid: list[int] | None = None
    reps: int = 10_000
    master_seed: int = DEFAULT_SEED
    t_grid: list[float] = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    p: list[float] = field(default_factory=lambda: [2.0])
    x_thresholds: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0])
    delta_grid: list[float] = field(default_factory=lambda: [0.01, 0.05, 0.1, 0.25])
    epsilon: float = 0.5
    m_grid: list[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0])
    inner_reps: int = 200
    outer_reps: int = 500
    out_dir: str = "revclt_out"
    threads: int | None = None

    def sizes(self) -> list[int]:
        if self.n_grid is not None:
            return list(self.n_grid)
        if self.n is not None:
            return [self.n]
        return list(DEFAULT_SIZES[self.command])

    def echo(self) -> list[str]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ",".join(_fmt_num(v) for v in value)
            elif value is None:
                value = "auto" if f.name == "threads" else ""
            out.append(f"{f.name} = {value}")
        return out


def _fmt_num(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


# --- value parsers -----------------------------------------------------------

def _int(key: str, text: str) -> int:
    try:
        value = float(text) if any(c in text for c in ".eE") else int(text)
    except ValueError:
        raise UsageError(f"{key}: malformed number {text!r}") from None
    if isinstance(value, float):
        if not value.is_integer():
            raise UsageError(f"{key}: expected an integer, got {text!r}")
        value = int(value)
    return value


def _float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{key}: malformed number {text!r}") from None


def _list(parse):
    def inner(key: str, text: str):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise UsageError(f"{key}: empty list")
        return [parse(key, t) for t in items]
    return inner


def _threads(key: str, text: str):
    return None if text.strip().lower() == "auto" else _int(key, text)


def _str(key: str, text: str) -> str:
    return text


PARSERS = {
    "n": _int,
    "n_grid": _list(_int),
    "reps": _int,
    "master_seed": _int,
    "t_grid": _list(_float),
    "p": _list(_float),
    "x_thresholds": _list(_float),
    "delta_grid": _list(_float),
    "epsilon": _float,
    "m_grid": _list(_float),
    "inner_reps": _int,
    "outer_reps": _int,
    "out_dir": _str,
    "threads": _threads,
}
# file keys that name the same field
ALIASES = {"seed": "master_seed"}


def read_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"config file {path}: {exc.strerror}") from None
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in PARSERS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


# --- argparse ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    d = RunConfig("exact")
    sizes = "; ".join(f"{c}: {','.join(map(str, v))}" for c, v in DEFAULT_SIZES.items())
    parser = _Parser(
        prog="revclt",
        description="Exact and Monte Carlo checks of limit theorems for the sign "
                    "functional of a reversible holding chain on [-1, 1].",
        epilog=f"Default sizes per command when neither --n nor --n-grid is set: {sizes}. "
               "Flags override the config file, which overrides $" + SEED_ENV + " and the "
               "built-in defaults. Exit codes: 0 pass, 1 fail, 2 inconclusive, 64 usage error.",
    )
    parser.add_argument("command", choices=COMMANDS, help="what to run")
    parser.add_argument("--config", metavar="PATH", help="flat 'key = value' file (default: none)")
    parser.add_argument("--n", help="single chain length (default: per command, see below)")
    parser.add_argument("--n-grid", help="comma-separated chain lengths (default: per command)")
    parser.add_argument("--reps", help=f"Monte Carlo replicates (default: {d.reps})")
    parser.add_argument("--seed", dest="master_seed",
                        help=f"master seed (default: ${SEED_ENV} or {DEFAULT_SEED})")
    parser.add_argument("--t-grid", help="times in (0,1] for W_n(t) (default: 0.25,0.5,0.75,1.0)")
    parser.add_argument("--p", help="moment orders > 1 for the Lp maximal bound (default: 2)")
    parser.add_argument("--x-thresholds",
                        help="tail levels as multiples of sigma_n (default: 1,2,4)")
    parser.add_argument("--delta-grid", help="deltas for the tightness table (default: 0.01,0.05,0.1,0.25)")
    parser.add_argument("--epsilon", help=f"level for the tightness table, times sigma_n (default: {d.epsilon})")
    parser.add_argument("--m-grid", help="truncation levels for the tail-mass table (default: 0,1,2,3)")
    parser.add_argument("--inner-reps", help=f"inner chains per start state (default: {d.inner_reps})")
    parser.add_argument("--outer-reps", help=f"outer start draws for nested estimates (default: {d.outer_reps})")
    parser.add_argument("--out-dir", help=f"output directory (default: {d.out_dir})")
    parser.add_argument("--threads", help="worker threads or 'auto' (default: auto)")
    return parser


def _validate(cfg: RunConfig) -> None:
    def positive(key, values):
        for v in values if isinstance(values, list) else [values]:
            if v is None or not v > 0:
                raise UsageError(f"{key}: must be positive, got {v}")

    if cfg.n is not None:
        positive("n", cfg.n)
    if cfg.n_grid is not None:
        positive("n_grid", cfg.n_grid)
    positive("reps", cfg.reps)
    positive("inner_reps", cfg.inner_reps)
    positive("outer_reps", cfg.outer_reps)
    positive("x_thresholds", cfg.x_thresholds)
    positive("delta_grid", cfg.delta_grid)
    positive("epsilon", cfg.epsilon)
    if cfg.threads is not None:
        positive("threads", cfg.threads)
    if any(m < 0 for m in cfg.m_grid):
        raise UsageError("m_grid: values must be non-negative")
    if any(p <= 1.0 for p in cfg.p):
        raise UsageError("p: moment orders must exceed 1")
    for t in cfg.t_grid:
        if not 0.0 < t <= 1.0:
            raise UsageError(f"t_grid: grid point {t} out of (0,1]")
    if any(b < a for a, b in zip(cfg.t_grid, cfg.t_grid[1:])):
        raise UsageError("t_grid: must be sorted")
    if not 0 <= cfg.master_seed < 2**64:
        raise UsageError("master_seed: must be an unsigned 64-bit integer")
    out = Path(cfg.out_dir)
    probe = out if out.exists() else next((p for p in out.parents if p.exists()), Path("."))
    if not probe.is_dir() or not os.access(probe, os.W_OK):
        raise UsageError(f"out_dir: {cfg.out_dir} is not writable")


def parse_config(argv: Sequence[str] | None = None, config_file=None,
                 environ: dict | None = None) -> RunConfig:
    """Precedence: flags, then the config file, then ``$REVCLT_SEED``, then defaults."""
    args = build_parser().parse_args(argv)
    env = os.environ if environ is None else environ
    path = args.config or config_file
    file_values = read_config_file(path) if path else {}

    flag_values = {k: v for k, v in vars(args).items()
                   if k not in ("command", "config") and v is not None}
    if "n" in flag_values and "n_grid" in flag_values:
        raise UsageError("n: conflicting flags --n and --n-grid")
    if "n" in file_values and "n_grid" in file_values:
        raise UsageError("n: config file sets both n and n_grid")
    # a size flag replaces any size given in the file
    if "n" in flag_values or "n_grid" in flag_values:
        file_values.pop("n", None)
        file_values.pop("n_grid", None)

    cfg = RunConfig(args.command)
    if SEED_ENV in env and env[SEED_ENV].strip():
        cfg.master_seed = _int(SEED_ENV, env[SEED_ENV].strip())
    for source in (file_values, flag_values):
        for key, text in source.items():
            setattr(cfg, key, PARSERS[key](key, str(text)))
    _validate(cfg)
    return cfg
