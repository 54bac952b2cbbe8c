"""Command-line interface.

Examples
--------
Expected power of a 500-subject trial from a pilot file::

    bepboot --input pilot.csv --future-n 500 --m 5000 --seed 7

Power distribution over a sample-size sweep, written to CSV::

    bepboot --input pilot.csv --command power-dist --t 200 \\
        --future-n 200 --future-n 400 --future-n 600 --out pos.csv

Flags override values read from ``--config`` (JSON or TOML, keys named like
the flags with underscores).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .analytic import NormalPilotSummary, conjugate_mvn_bep, conjugate_normal_bep
from .core import BepError, DirichletPrior, PilotDataset, TrialPlan
from .estimators import bbs_bep, bbs_power_distribution, bootstrap_power, bs2_power_distribution
from .io import atomic_write_text, load_config, load_pilot_csv
from .resampling import StudyCollection
from .rules import IntersectionUnionRule, OneSampleRule, RejectionRule, parse_rule, rule_from_dict
from .simstudy import SimStudyConfig, run_sim_study

COMMANDS = ("bep", "power-dist", "bs2", "boot-power", "model-bep", "sim-study")
SUMMARY_FIELDS = ("command", "future_n", "estimate", "mc_se", "m", "t", "seed")


@dataclass
class RunConfig:
    """Everything one invocation needs.  Every field has a default."""

    command: str = "bep"
    input: Optional[str] = None
    rule: object = "one_sample_z"
    future_n: list = field(default_factory=list)  # empty: use the pilot size
    alpha: float = 0.05
    prior_alpha: float = 0.0
    m: int = 1000
    t: int = 1
    seed: int = 0
    workers: int = 1
    out: Optional[str] = None
    format: str = "csv"
    # sim-study only
    study: int = 1
    pilot_sizes: Optional[list] = None
    replications: Optional[int] = None
    full_scale: bool = False

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        values = {k.replace("-", "_"): v for k, v in values.items()}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown config key(s): {unknown}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}; expected one of {list(COMMANDS)}")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be 'csv' or 'json'")
        if isinstance(self.future_n, int):
            self.future_n = [self.future_n]
        self.future_n = [int(n) for n in self.future_n]
        if self.command != "sim-study" and not self.input:
            raise ValueError(f"command {self.command!r} needs --input")
        if self.m < 1 or self.t < 1:
            raise ValueError("m and t must be >= 1")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def build_rule(self) -> RejectionRule:
        if isinstance(self.rule, RejectionRule):
            return self.rule
        if isinstance(self.rule, dict):
            return rule_from_dict(self.rule)
        return parse_rule(str(self.rule))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bepboot",
        description="Bayesian expected power of a planned trial from individual-level pilot data.",
        epilog="Rules: one_sample_z[:null_mean=0;column=0], one_sample_t[...], "
        "intersection_onesided_t:thresholds=2.7,4.5;log_transform=true, "
        "tost_equivalence:bounds=0.8,1.25;log_transform=true",
    )
    # defaults are None so that config-file values survive unless a flag is given
    p.add_argument("--input", "-i", help="pilot CSV (header row; optional study_id column)")
    p.add_argument("--command", "-c", choices=COMMANDS, help="estimator to run (default: bep)")
    p.add_argument("--rule", help="rejection rule, e.g. 'one_sample_t:null_mean=0' (default: one_sample_z)")
    p.add_argument("--future-n", "-n", type=int, action="append", dest="future_n",
                   help="planned trial size; repeat for a sweep (default: pilot size)")
    p.add_argument("--alpha", type=float, help="significance level (default: 0.05)")
    p.add_argument("--prior-alpha", type=float, help="Dirichlet hyper-parameter alpha_k (default: 0)")
    p.add_argument("--m", type=int, help="outer Monte Carlo draws (default: 1000)")
    p.add_argument("--t", type=int, help="inner trials per draw (default: 1)")
    p.add_argument("--seed", type=int, help="master seed (default: 0)")
    p.add_argument("--workers", type=int, help="worker processes; 0 = all cores (default: 1)")
    p.add_argument("--out", "-o", help="output file; power samples go to <stem>_samples.csv")
    p.add_argument("--format", choices=("csv", "json"), help="output file format (default: csv)")
    p.add_argument("--config", help="JSON or TOML run configuration")
    g = p.add_argument_group("sim-study")
    g.add_argument("--study", type=int, choices=(1, 2), help="simulation study (default: 1)")
    g.add_argument("--pilot-sizes", type=lambda s: [int(x) for x in s.split(",")], help="comma-separated pilot sizes")
    g.add_argument("--replications", type=int, help="replications per pilot size (default: 200, desk scale)")
    g.add_argument("--full-scale", action="store_true", default=None, help="use the full-scale replication counts")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for k, v in vars(args).items():
        if k != "config" and v is not None:
            values[k] = v
    return RunConfig.from_mapping(values)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _model_distribution(pilot, plan: TrialPlan, cfg: RunConfig):
    if isinstance(pilot, StudyCollection):
        raise ValueError("model-bep needs a single-study input")
    rule = plan.rule
    if isinstance(rule, OneSampleRule) and rule.variant == "z":
        summary = NormalPilotSummary.from_data(pilot, rule.column)
        return conjugate_normal_bep(summary, plan, m=cfg.m, seed=cfg.seed)
    log = isinstance(rule, IntersectionUnionRule) and rule.log_transform
    return conjugate_mvn_bep(pilot, plan, m=cfg.m, t=cfg.t, seed=cfg.seed, log_transform=log, workers=cfg.workers)


def estimate(pilot, plan: TrialPlan, cfg: RunConfig):
    """Run ``cfg.command`` for one plan; returns ``(estimate, samples or None)``."""
    prior = DirichletPrior(cfg.prior_alpha)
    kw = dict(m=cfg.m, seed=cfg.seed, workers=cfg.workers)
    if cfg.command == "bep":
        if cfg.t > 1:
            dist = bbs_power_distribution(pilot, plan, prior, t=cfg.t, **kw)
            return dist.to_estimate(), dist
        return bbs_bep(pilot, plan, prior, **kw), None
    if cfg.command == "power-dist":
        dist = bbs_power_distribution(pilot, plan, prior, t=cfg.t, **kw)
    elif cfg.command == "bs2":
        dist = bs2_power_distribution(pilot, plan, t=cfg.t, **kw)
    elif cfg.command == "boot-power":
        return bootstrap_power(pilot, plan, **kw), None
    else:
        dist = _model_distribution(pilot, plan, cfg)
    return dist.to_estimate(), dist


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(h)), *(len(str(r[k])) for r in rows)) for k, h in enumerate(header)]
    lines = ["  ".join(str(h).rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(str(c).rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def run_estimators(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    pilot = load_pilot_csv(cfg.input)
    rule = cfg.build_rule()
    sizes = cfg.future_n or [_total_n(pilot)]
    summary, samples = [], []
    for n in sizes:
        plan = TrialPlan(n, cfg.alpha, rule)
        est, dist = estimate(pilot, plan, cfg)
        # t=0 marks draws whose power was evaluated in closed form
        t = 1 if dist is None else (dist.t or 0)
        summary.append([cfg.command, n, _fmt(est.bep), _fmt(est.mc_se), est.m, t, cfg.seed])
        if t != 1:
            samples.extend([n, j, _fmt(v)] for j, v in enumerate(dist.samples))

    doc = {
        "command": cfg.command,
        "input": str(cfg.input),
        "rule": rule.to_dict(),
        "alpha": cfg.alpha,
        "prior_alpha": cfg.prior_alpha,
        "results": [dict(zip(SUMMARY_FIELDS, r)) for r in summary],
    }
    for r in doc["results"]:
        r["estimate"], r["mc_se"] = float(r["estimate"]), float(r["mc_se"])
    # everything is computed before anything is written
    if cfg.out:
        out = Path(cfg.out)
        files = []
        if cfg.format == "csv":
            files.append((out, _csv_text(SUMMARY_FIELDS, summary)))
        else:
            body = dict(doc, samples=[{"future_n": r[0], "draw": r[1], "power": float(r[2])} for r in samples])
            files.append((out, json.dumps(body, indent=2) + "\n"))
        if samples and cfg.format == "csv":
            files.append((out.with_name(f"{out.stem}_samples.csv"), _csv_text(("future_n", "draw", "power"), samples)))
        for path, text in files:
            atomic_write_text(path, text)
    print(_table(SUMMARY_FIELDS, summary), file=stdout)
    print(json.dumps(doc, sort_keys=True), file=stdout)
    return 0


def _total_n(pilot) -> int:
    if isinstance(pilot, PilotDataset):
        return pilot.n
    return int(sum(pilot.sizes))


def run_sim(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    overrides = dict(m=cfg.m, t=cfg.t, seed=cfg.seed, alpha=cfg.alpha)
    if cfg.pilot_sizes:
        overrides["pilot_sizes"] = tuple(cfg.pilot_sizes)
    if cfg.replications:
        overrides["replications"] = cfg.replications
    if cfg.future_n:
        if len(cfg.future_n) > 1:
            raise ValueError("sim-study takes a single --future-n")
        overrides["future_n"] = cfg.future_n[0]
    sim_cfg = SimStudyConfig.full_scale(cfg.study, **overrides) if cfg.full_scale else SimStudyConfig.desk(cfg.study, **overrides)
    report = run_sim_study(sim_cfg, workers=cfg.workers)
    header = ("pilot_size", "difference", "mean", "sd", "se")
    rows = [[s["pilot_size"], s["difference"], _fmt(s["mean"]), _fmt(s["sd"]), _fmt(s["se"])] for s in report.summary()]
    if cfg.out:
        out = Path(cfg.out)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("study", "pilot_size", "replication", "metric", "value"))
        for row in report.rows():
            for name in report.metrics:
                w.writerow((sim_cfg.study, row["pilot_size"], row["replication"], name, _fmt(row[name])))
        summary_text = _csv_text(header, rows)
        atomic_write_text(out, buf.getvalue())
        atomic_write_text(out.with_name(f"{out.stem}_summary.csv"), summary_text)
    print(_table(header, rows), file=stdout)
    print(json.dumps({"command": "sim-study", "config": sim_cfg.to_dict(), "summary": report.summary()}, sort_keys=True), file=stdout)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if cfg.command == "sim-study":
            return run_sim(cfg)
        return run_estimators(cfg)
    except (BepError, ValueError, KeyError, OSError) as exc:
        print(f"bepboot: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
