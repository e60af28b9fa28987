"""``revclt`` command line: dispatch, CSV reports and the run manifest."""
from __future__ import annotations

import math
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .analytics import exact_sigma2, regen_tail, solve_bn, variance_profile, VarianceProfile
from .config import DEFAULT_SIZES, RunConfig, UsageError, parse_config
from .decomposition import DecompositionRecord, decompose_fb, martingale_property_check
from .fclt import (ConditionalCltReport, CltResult, FddReport, Key2Result, TIGHTNESS_COLUMNS,
                   UI_COLUMNS, clt_test, conditional_clt_test, dkw_two_sample_bound, fdd_cov_test,
                   key2_estimate, symmetry_distance, tightness_modulus, tightness_rows,
                   ui_diagnostic)
from .inequalities import FAIL, INCONCLUSIVE, PASS, InequalityReport, check_lp, check_tail
from .reports import emit_csv
from .rng import RngStream
from .simulation import (MonteCarloEstimate, PathSampler, sample_regen_blocks, save_trajectory,
                         simulate_direct)

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 64

ESTIMATE_COLUMNS = ("name", "n", "mean", "std_error", "reps", "ci_low", "ci_high", "exact",
                    "z_score", "master_seed")
REGEN_COLUMNS = ("quantity", "y", "empirical", "std_error", "exact", "z_score", "count", "master_seed")
INCREMENT_COLUMNS = FddReport.INCREMENT_COLUMNS
KEY2_MAX_N = 10**4


@dataclass
class Check:
    name: str
    status: str
    gating: bool = True
    detail: str = ""


class Run:
    """Collects files and checks for one invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.checks: list[Check] = []
        self.files: list[str] = []
        self.tables: dict[str, list[dict]] = {}

    def sizes(self, command: str) -> list[int]:
        if self.cfg.command == "all" and self.cfg.n is None and self.cfg.n_grid is None:
            return list(DEFAULT_SIZES[command])
        return self.cfg.sizes()

    def check(self, name: str, ok, gating: bool = True, detail: str = "") -> None:
        status = ok if isinstance(ok, str) else (PASS if ok else FAIL)
        self.checks.append(Check(name, status, gating, detail))

    def table(self, name: str, rows: list[dict], schema) -> None:
        self.tables.setdefault(name, []).extend(rows)
        self.tables[name + "::schema"] = list(schema)

    def write(self) -> None:
        for name in [k for k in self.tables if not k.endswith("::schema")]:
            emit_csv(self.tables[name], self.tables[name + "::schema"], self.out / f"{name}.csv")
            self.files.append(f"{name}.csv")

    def exit_code(self) -> int:
        gated = [c.status for c in self.checks if c.gating]
        if FAIL in gated:
            return EXIT_FAIL
        if INCONCLUSIVE in gated:
            return EXIT_INCONCLUSIVE
        return EXIT_PASS


def _estimate_row(est: MonteCarloEstimate, n: int, exact: float) -> dict:
    return {"name": est.name, "n": n, "mean": est.mean, "std_error": est.std_error, "reps": est.reps,
            "ci_low": est.ci_low, "ci_high": est.ci_high, "exact": exact,
            "z_score": est.z_score(exact), "master_seed": est.master_seed}


# --- commands ----------------------------------------------------------------

def cmd_exact(run: Run) -> None:
    profile = variance_profile(run.sizes("exact"))
    run.table("variance_profile", profile.rows(), VarianceProfile.COLUMNS)
    run.check("exact: sigma2/(2n ln n) increasing", profile.ratio_increasing, gating=False)
    run.check("exact: ||E_0 S_n||_2^2 / sigma2 decreasing", profile.cond_ratio_decreasing, gating=False)


def cmd_simulate(run: Run) -> None:
    cfg = run.cfg
    sizes = run.sizes("simulate")
    rows = []
    for n in sizes:
        sums = PathSampler(n, [n]).batch(cfg.reps, cfg.master_seed, cfg.threads).sums[:, 0]
        est = MonteCarloEstimate.from_samples(sums.astype(float) ** 2, cfg.master_seed, "E_S_n^2")
        s2 = exact_sigma2(n)
        rows.append(_estimate_row(est, n, s2))
        run.check(f"simulate: E S_n^2 = sigma2 (n={n})", est.within(s2),
                  detail=f"z={est.z_score(s2):.3f}")
    run.table("estimates", rows, ESTIMATE_COLUMNS)
    run.out.mkdir(parents=True, exist_ok=True)
    save_trajectory(simulate_direct(sizes[0], RngStream(cfg.master_seed, 0)), run.out / "trajectory.csv")
    run.files.append("trajectory.csv")


def cmd_decompose(run: Run) -> None:
    cfg = run.cfg
    rows = []
    for n in run.sizes("decompose"):
        rec = decompose_fb(simulate_direct(n, RngStream(cfg.master_seed, 0)), n)
        rows.extend({"n": n, **r} for r in rec.rows())
        run.check(f"decompose: pathwise identities (n={n})", rec.identities_hold(),
                  detail=f"fwd={rec.residual_fwd:.3g} fb={rec.residual_fb:.3g}")
        mc = martingale_property_check(n, cfg.reps, cfg.master_seed, threads=cfg.threads)
        run.check(f"decompose: E(D_k+1 | xi_k) = 0 (n={n})", mc.analytic_max_abs <= 1e-10,
                  detail=f"max={mc.analytic_max_abs:.3g}")
        est_rows = []
        for est in mc.lag_corr:
            est_rows.append(_estimate_row(est, n, 0.0))
            run.check(f"decompose: {est.name} = 0 (n={n})", est.within(0.0),
                      detail=f"z={est.z_score(0.0):.3f}")
        run.table("estimates", est_rows, ESTIMATE_COLUMNS)
    run.table("decomposition", rows, ("n",) + DecompositionRecord.CSV_COLUMNS)


def cmd_ineq(run: Run) -> None:
    cfg = run.cfg
    reports: list[InequalityReport] = []
    for n in run.sizes("ineq"):
        for p in cfg.p:
            reports.append(check_lp(p, n, cfg.reps, cfg.master_seed, cfg.threads))
        sigma = math.sqrt(exact_sigma2(n))
        for x in cfg.x_thresholds:
            reports.append(check_tail(x * sigma, n, cfg.reps, cfg.master_seed, cfg.threads))
    for r in reports:
        label = f"p={r.p:g}" if r.kind == "lp" else f"x={r.x:.6g}"
        run.check(f"ineq: {r.kind} {label} n={r.n}", r.verdict,
                  detail=f"margin={r.margin:.4g}{' vacuous' if r.vacuous else ''}")
    run.table("inequality_report", [r.row() for r in reports], InequalityReport.COLUMNS)


def _non_increasing(values, slack) -> bool:
    """At most one rise, and that rise no larger than ``slack``."""
    rises = [b - a for a, b in zip(values, values[1:]) if b > a]
    return len(rises) == 0 or (len(rises) == 1 and rises[0] <= slack)


def cmd_clt(run: Run) -> None:
    cfg = run.cfg
    sizes = run.sizes("clt")
    results: list[CltResult] = []
    for n in sizes:
        r = clt_test(n, cfg.reps, cfg.master_seed, cfg.threads)
        results.append(r)
        run.check(f"clt: mean of W_n(1) = 0 (n={n})", r.mean.within(0.0))
        run.check(f"clt: E W_n(1)^2 = 1 (n={n})", r.second_moment.within(1.0))
        run.check(f"clt: symmetry (n={n})",
                  symmetry_distance(r.sample) < dkw_two_sample_bound(r.ks.reps))
    run.table("clt_report", [r.row() for r in results], CltResult.COLUMNS)
    ks = [r.ks.statistic for r in results]
    run.check("clt: KS vs N(0,1/2) non-increasing in n", _non_increasing(ks, _ks_slack(cfg.reps)),
              gating=False, detail=" ".join(f"{k:.4f}" for k in ks))

    fractions = []
    for n in sizes:
        rep = conditional_clt_test(None, n, cfg.inner_reps, cfg.master_seed, threads=cfg.threads)
        run.table("conditional_clt_report", rep.rows(), ConditionalCltReport.COLUMNS)
        fractions.append(rep.fraction_exceeding(0.1))
    run.check("clt: conditional deviation share (eps=0.1) non-increasing", _non_increasing(fractions, 0.0),
              gating=False, detail=" ".join(f"{f:.3f}" for f in fractions))
    run.table("ui_report", ui_diagnostic(cfg.m_grid, sizes, cfg.reps, cfg.master_seed, cfg.threads),
              UI_COLUMNS)


def _ks_slack(reps: int) -> float:
    # 99% DKW half-width of a single KS statistic
    return math.sqrt(math.log(2.0 / 0.01) / (2.0 * reps))


def cmd_fclt(run: Run) -> None:
    cfg = run.cfg
    sizes = run.sizes("fclt")
    for n in sizes:
        rep = fdd_cov_test(cfg.t_grid, n, cfg.reps, cfg.master_seed, cfg.threads)
        run.table("fdd_report", rep.rows(), FddReport.COLUMNS)
        run.table("fdd_increments", rep.increment_rows(), INCREMENT_COLUMNS)
        run.check(f"fclt: E W_n(s)W_n(t) matches exact (n={n})", rep.matches_exact())
        rows = tightness_modulus(cfg.delta_grid, cfg.epsilon, n, cfg.reps, cfg.master_seed, cfg.threads)
        run.table("tightness_report", tightness_rows(rows, n, cfg.epsilon), TIGHTNESS_COLUMNS)
        lo = min(rows, key=lambda r: r.delta)
        hi = max(rows, key=lambda r: r.delta)
        if lo.delta < hi.delta:
            run.check(f"fclt: tightness smaller at delta={lo.delta:g} than {hi.delta:g} (n={n})",
                      lo.scaled < hi.scaled, gating=False)
    key2: list[Key2Result] = []
    for n in [n for n in sizes if n <= KEY2_MAX_N]:
        key2.append(key2_estimate(n, cfg.outer_reps, cfg.inner_reps, cfg.master_seed, cfg.threads))
    run.table("key2_report", [k.row() for k in key2], Key2Result.COLUMNS)
    if len(key2) > 1:
        run.check("fclt: conditional variance deviation non-increasing",
                  _non_increasing([k.raw.mean for k in key2], 0.0), gating=False)


def cmd_regen(run: Run) -> None:
    cfg = run.cfg
    blocks = sample_regen_blocks(cfg.reps, RngStream(cfg.master_seed, 0))
    tau = blocks.tau.astype(float)
    rows = []

    def add(quantity, y, est, exact):
        rows.append({"quantity": quantity, "y": y, "empirical": est.mean, "std_error": est.std_error,
                     "exact": exact, "z_score": est.z_score(exact), "count": est.reps,
                     "master_seed": cfg.master_seed})
        return est

    for y in (1, 2, 5, 10, 100):
        # binomial standard error under the exact law; stays positive when no block exceeds y
        p0 = regen_tail(y)
        hits = float(np.mean(tau > y))
        est = MonteCarloEstimate.from_moments(hits, math.sqrt(p0 * (1.0 - p0) / tau.size), tau.size,
                                              cfg.master_seed, "tail")
        add("tail", y, est, p0)
        run.check(f"regen: P(tau > {y})", est.within(p0), detail=f"z={est.z_score(p0):.3f}")
    y = 1000
    scaled = y * y * regen_tail(y)
    rows.append({"quantity": "y2_tail_exact", "y": y, "empirical": scaled, "std_error": 0.0,
                 "exact": 2.0, "z_score": None, "count": 0, "master_seed": None})
    run.check("regen: y^2 P(tau > y) within 5% of 2 at y=1000", abs(scaled / 2.0 - 1.0) < 0.05)
    capped = np.minimum(tau, 1e12)
    mean = add("mean", None, MonteCarloEstimate.from_samples(capped, cfg.master_seed), 2.0)
    run.check("regen: E tau = 2", mean.within(2.0), detail=f"z={mean.z_score(2.0):.3f}")
    for n in run.sizes("regen"):
        if n >= 2:
            sol = solve_bn(n)
            rows.append({"quantity": "b_n", "y": n, "empirical": sol.b, "std_error": 0.0,
                         "exact": sol.proxy, "z_score": None, "count": 0, "master_seed": None})
    run.table("regen_report", rows, REGEN_COLUMNS)


COMMANDS: dict[str, Callable[[Run], None]] = {
    "exact": cmd_exact,
    "simulate": cmd_simulate,
    "decompose": cmd_decompose,
    "ineq": cmd_ineq,
    "clt": cmd_clt,
    "fclt": cmd_fclt,
    "regen": cmd_regen,
}


def _versions() -> list[str]:
    import numba
    import scipy

    return [f"python = {platform.python_version()}", f"numpy = {np.__version__}",
            f"scipy = {scipy.__version__}", f"numba = {numba.__version__}", f"revclt = {__version__}"]


def write_manifest(run: Run, seconds: float) -> None:
    lines = ["[config]", *run.cfg.echo(), "", "[versions]", *_versions(), "",
             "[run]", f"wall_clock_seconds = {seconds:.3f}", f"exit_code = {run.exit_code()}",
             f"files = {','.join(run.files)}", "", "[checks]"]
    for c in run.checks:
        tag = "" if c.gating else " (diagnostic)"
        detail = f"  [{c.detail}]" if c.detail else ""
        lines.append(f"{c.status.upper()}{tag}: {c.name}{detail}")
    (run.out / "manifest.txt").write_text("\n".join(lines) + "\n")


def execute(cfg: RunConfig) -> Run:
    """Execute ``cfg`` and write CSVs plus ``manifest.txt`` under ``out_dir``."""
    started = time.perf_counter()
    r = Run(cfg)
    r.out.mkdir(parents=True, exist_ok=True)
    names = list(COMMANDS) if cfg.command == "all" else [cfg.command]
    for name in names:
        try:
            COMMANDS[name](r)
        except Exception as exc:
            raise RuntimeError(f"{name}: {exc}") from exc
    r.write()
    write_manifest(r, time.perf_counter() - started)
    return r


def run(cfg: RunConfig) -> int:
    return execute(cfg).exit_code()


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"revclt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    r = execute(cfg)
    for c in r.checks:
        print(f"{c.status.upper()}{'' if c.gating else ' (diagnostic)'}: {c.name}")
    print(f"reports written to {r.out}")
    return r.exit_code()


if __name__ == "__main__":
    sys.exit(main())
