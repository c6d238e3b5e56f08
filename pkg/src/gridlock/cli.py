"""Command-line front end.

    gridlock run|sweep|bode|validate --config <path> --out <dir>
             [--set key=value]... [--criterion <name>]...

Exit codes: 0 success, 1 usage/config error, 2 validation failure,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _backend, harness, small_signal, validation
from .fll import DivergenceError, Estimator, FllError, FllGains
from .signals import ScenarioError, scenario_from_dict

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3

TRACE_HEADER = (
    "t", "u_alpha", "u_beta", "u_d", "u_q", "uhat_d", "uhat_q", "omega_hat", "omega_b",
    "theta_hat", "theta_e_hat", "theta_est", "ud_est", "uq_est", "x_aI", "e_q",
    "true_omega", "true_theta", "true_v",
)
METRICS_HEADER = (
    "suite", "estimator", "d_over_k", "channel", "settling_time_s", "overshoot_pct",
    "peak_value", "peak_time_s", "steady_state_error",
)
BODE_HEADER = ("omega_rad_s", "kind", "magnitude", "magnitude_db")


class UsageError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def trace_csv(trace: harness.RunTrace) -> str:
    cols = np.column_stack([trace.channel(name) for name in TRACE_HEADER])
    return csv_text(TRACE_HEADER, cols.tolist())


# --- config -------------------------------------------------------------------

def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: dict, overrides: Sequence[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values parse as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise UsageError(f"empty override key in {item!r}")
        node = cfg
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise UsageError(f"override {key!r} descends into a non-object")
            node = nxt
        node[parts[-1]] = _parse_value(raw)
    return cfg


def load_config(path: Optional[str], overrides: Sequence[str]) -> dict:
    cfg = {}
    if path is not None:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
    return apply_overrides(cfg, overrides)


def gains_from(cfg: dict) -> FllGains:
    g = cfg.get("gains", {})
    k = float(g.get("k", harness.K_DEFAULT))
    d = float(g["d"]) if "d" in g else float(g.get("d_over_k", 0.5)) * k
    if "theta0_hat_deg" in g:
        theta0 = math.radians(float(g["theta0_hat_deg"]))
    else:
        theta0 = float(g.get("theta0_hat_rad", 0.0))
    return FllGains(k=k, d=d, v_nom=float(g.get("v_nom", 1.0)), theta0_hat=theta0)


def run_config_from(cfg: dict) -> harness.RunConfig:
    if "scenario" not in cfg:
        raise UsageError("config has no 'scenario'")
    try:
        est = Estimator(cfg.get("estimator", "SrfFll"))
    except ValueError as exc:
        raise UsageError(f"unknown estimator {cfg.get('estimator')!r}") from exc
    return harness.RunConfig(
        est, gains_from(cfg), scenario_from_dict(cfg["scenario"]),
        warmup=float(cfg.get("warmup_s", harness.WARMUP_DEFAULT)),
    )


# --- subcommands --------------------------------------------------------------

def cmd_run(args, cfg: dict) -> int:
    rc = run_config_from(cfg)
    trace = harness.run(rc, args.backend)
    out = Path(args.out)
    meta = dict(cfg, backend=trace.backend, samples=len(trace))
    _write_atomic(out / "trace.csv", trace_csv(trace))
    _write_atomic(out / "config.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    last = len(trace) - 1
    print(f"{rc.estimator.value}: {len(trace)} samples -> {out / 'trace.csv'}; "
          f"final omega_hat error {trace.omega_hat[last] - trace.true_omega[last]:+.3e} rad/s")
    return EXIT_OK


def _cell_filename(c: harness.CellResult) -> str:
    return f"trace_{c.estimator.value}_d{c.d_over_k:g}k_{c.scenario_label}.csv"


def cmd_sweep(args, cfg: dict) -> int:
    try:
        suite = harness.Suite(cfg.get("suite", ""))
    except ValueError as exc:
        names = ", ".join(s.value for s in harness.Suite)
        raise UsageError(f"config must name a suite ({names})") from exc
    k = float(cfg.get("gains", {}).get("k", harness.K_DEFAULT))
    report = harness.paper_sweep(suite, k=k, backend=args.backend)
    bad = [c for c in report.cells if c.error]
    if bad:
        for c in bad:
            print(f"divergence in {c.estimator.value} d/k={c.d_over_k} {c.scenario_label}: {c.error}",
                  file=sys.stderr)
        return EXIT_DIVERGENCE
    out = Path(args.out)
    rows = []
    for c in report.cells:
        _write_atomic(out / _cell_filename(c), trace_csv(c.trace))
        label = suite.value if suite is not harness.Suite.DISTURBANCE_FIG8 else f"{suite.value}/{c.scenario_label}"
        for ch, m in c.metrics.items():
            r = m.as_row()
            rows.append((label, c.estimator.value, c.d_over_k, ch, r["settling_time_s"], r["overshoot_pct"],
                         r["peak_value"], r["peak_time_s"], r["steady_state_error"]))
    _write_atomic(out / "metrics.csv", csv_text(METRICS_HEADER, rows))
    for name, ok, detail in report.checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_bode(args, cfg: dict) -> int:
    b = cfg.get("bode", {})
    try:
        k = float(b.get("k", cfg.get("gains", {}).get("k", harness.K_DEFAULT)))
        d = float(b.get("d", cfg.get("gains", {}).get("d", 0.5 * k)))
        kinds = [small_signal.TfKind(x) for x in b.get("kinds", ["ConvOmega", "SrfOmegaB"])]
        w_min = float(b.get("omega_min", 0.1))
        w_max = float(b.get("omega_max", 1e4))
        points = int(b.get("points", 200))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad bode section: {exc}") from exc
    if not (w_min > 0 and w_max > w_min and points >= 2 and math.isfinite(w_max)):
        raise UsageError("bode grid needs 0 < omega_min < omega_max and points >= 2")
    omegas = np.geomspace(w_min, w_max, points)
    rows = []
    for kind in kinds:
        mag = small_signal.bode_magnitude(small_signal.build_tf(kind, k, d), omegas)
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(mag)
        rows.extend((w, kind.value, m, m_db) for w, m, m_db in zip(omegas, mag, db))
    _write_atomic(Path(args.out) / "bode.csv", csv_text(BODE_HEADER, rows))
    print(f"{len(rows)} rows ({points} per kind) -> {Path(args.out) / 'bode.csv'}")
    return EXIT_OK


def cmd_validate(args, cfg: dict) -> int:
    names = args.criterion or None
    try:
        results = validation.run_all(names, args.backend)
    except KeyError as exc:
        raise UsageError(f"{exc.args[0]}; known: {', '.join(validation.CRITERIA)}") from exc
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    if args.out:
        rows = [(r.number, r.name, "pass" if r.passed else "fail", r.detail.replace(",", ";")) for r in results]
        _write_atomic(Path(args.out) / "validation.csv", csv_text(("number", "criterion", "result", "detail"), rows))
    if failed:
        print("failed: " + ", ".join(r.name for r in failed), file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "bode": cmd_bode, "validate": cmd_validate}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gridlock", description="Synchronous-frame FLL simulation and analysis")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config (scenario, gains, estimator, suite, bode grid)")
    p.add_argument("--out", default=None,
                   help="output directory (default: current; validate writes a file only when given)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key, e.g. gains.d=753.98")
    p.add_argument("--criterion", action="append", default=[],
                   help="validate: run only the named criterion (repeatable)")
    p.add_argument("--backend", choices=("auto",) + _backend.BACKENDS, default=None,
                   help="kernel backend (default: $GRIDLOCK_BACKEND or auto)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("run", "sweep", "bode") and args.config is None:
            raise UsageError(f"{args.command} requires --config")
        cfg = load_config(args.config, args.overrides)
        if args.command != "validate" and args.out is None:
            args.out = "."
        return COMMANDS[args.command](args, cfg)
    except DivergenceError as exc:
        print(f"gridlock: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (UsageError, ScenarioError, FllError, ImportError, OSError, ValueError, KeyError) as exc:
        print(f"gridlock: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
