"""Command line interface for the experiment harness.

Subcommands:

  run         all seeds at one (beta, m) configuration
  sweep-beta  grid over beta; each seed keeps its instance across values
  sweep-m     grid over the measurement count
  check       quick internal validation battery

Configuration merges three layers, later wins: built-in defaults, a
flat JSON config file (--config, keys named like the flags), explicit
flags. Exit codes: 0 on success, 1 on configuration errors, 2 on any
fatal runtime error (modeled solver failures are recorded per trial
and do not abort a sweep).
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .harness import (
    ConfigError,
    ExperimentSpec,
    I0Mode,
    Storage,
    SweepSummary,
    run_batch,
    run_beta_sweep,
    run_m_sweep,
    run_self_checks,
)
from .solvers import Algorithm, StepScaleMode

# JSON config keys; everything here maps 1:1 onto ExperimentSpec fields.
_CONFIG_KEYS = {
    "n",
    "k",
    "m",
    "seeds",
    "algorithm",
    "beta",
    "eta",
    "max_steps",
    "step_scale_mode",
    "stop_tol",
    "record_every",
    "beta_grid",
    "m_grid",
    "i0_mode",
    "delta_audit",
    "output_dir",
    "success_threshold",
    "min_component",
    "storage",
}


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t)


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--n", type=int, help="ambient dimension")
    p.add_argument("--k", type=int, help="signal sparsity")
    p.add_argument("--m", type=int, help="measurement count")
    p.add_argument(
        "--seed", type=int, action="append", dest="seeds", help="trial seed (repeatable)"
    )
    p.add_argument("--algorithm", choices=[a.value for a in Algorithm])
    p.add_argument("--beta", type=float, help="mirror map scale")
    p.add_argument("--eta", type=float, help="step size (or RK4 step)")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument(
        "--step-scale",
        choices=[s.value for s in StepScaleMode],
        dest="step_scale_mode",
        help="raw: use eta as is; signal_cubed: eta / theta_hat^3",
    )
    p.add_argument("--stop-tol", type=float, dest="stop_tol")
    p.add_argument("--record-every", type=int, dest="record_every")
    p.add_argument("--beta-grid", type=_float_list, dest="beta_grid")
    p.add_argument("--m-grid", type=_int_list, dest="m_grid")
    p.add_argument("--i0-mode", choices=[i.value for i in I0Mode], dest="i0_mode")
    p.add_argument("--delta-audit", type=float, dest="delta_audit")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--success-threshold", type=float, dest="success_threshold")
    p.add_argument("--min-component", type=float, dest="min_component")
    p.add_argument("--storage", choices=[s.value for s in Storage])
    p.add_argument("--workers", type=int, default=1, help="parallel trial processes")


def _load_config(path: str) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return raw


def _build_spec(args: argparse.Namespace) -> ExperimentSpec:
    merged: dict = {}
    if args.config:
        merged.update(_load_config(args.config))
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    for key in ("n", "k", "m"):
        if key not in merged:
            raise ConfigError(f"missing required parameter: {key}")
    try:
        if "seeds" in merged:
            merged["seeds"] = tuple(int(s) for s in merged["seeds"])
        if "beta_grid" in merged:
            merged["beta_grid"] = tuple(float(b) for b in merged["beta_grid"])
        if "m_grid" in merged:
            merged["m_grid"] = tuple(int(m) for m in merged["m_grid"])
        if "algorithm" in merged:
            merged["algorithm"] = Algorithm(merged["algorithm"])
        if "step_scale_mode" in merged:
            merged["step_scale_mode"] = StepScaleMode(merged["step_scale_mode"])
        if "i0_mode" in merged:
            merged["i0_mode"] = I0Mode(merged["i0_mode"])
        if "storage" in merged:
            merged["storage"] = Storage(merged["storage"])
        return ExperimentSpec(**merged)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _print_summary(summary: SweepSummary) -> None:
    for r in summary.trials:
        if r.error is not None:
            print(f"seed {r.seed} beta {r.beta:g} m {r.m}: FAILED ({r.error})")
    for c in summary.cells:
        print(
            f"{c.algorithm} n={c.n} k={c.k} m={c.m} beta={c.beta:g} eta={c.eta:g}: "
            f"{c.successes}/{c.trials} succeeded, "
            f"median final rel_dist {c.median_final_rel_dist:.3g}, "
            f"median t1 step {c.median_t1_step:g}, "
            f"audit pass rate {c.audit_pass_rate:.2f}"
        )
    print(f"summary written to {summary.summary_path}")


def _cmd_check(seed: int) -> int:
    results = run_self_checks(seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    return 0 if all(r.ok for r in results) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirrorphase",
        description="Sparse phase retrieval experiments with hypentropy mirror descent",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "all seeds at one configuration"),
        ("sweep-beta", "sweep over the mirror map scale"),
        ("sweep-m", "sweep over the measurement count"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_spec_flags(p)
    p = sub.add_parser("check", help="run the internal validation battery")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad flags; those are configuration errors here
        return 0 if e.code in (0, None) else 1
    try:
        if args.command == "check":
            return _cmd_check(args.seed)
        spec = _build_spec(args)
        if args.command == "run":
            summary = run_batch(spec, workers=args.workers)
        elif args.command == "sweep-beta":
            summary = run_beta_sweep(spec, workers=args.workers)
        else:
            summary = run_m_sweep(spec, workers=args.workers)
        _print_summary(summary)
        return 0
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001  fatal trial or I/O failure
        print(f"fatal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
