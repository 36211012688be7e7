"""Command-line entry point.

::

    dfsmem prep-fidelity | storage | parity | gate-design | detect-calib
           [--config FILE] [--seed N] [--out DIR] [--format csv|json]
    dfsmem fit --in storage.csv [--out DIR] [--format csv|json]

Results go to ``DIR/<command>.<format>`` when ``--out`` is given, otherwise to
stdout.  Exit status: 0 success, 1 usage or validation error, 2 solver or
fit failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from .. import __version__
from ..errors import SolverError, ValidationError
from . import pipelines
from .config import ExperimentConfig, from_dict, load_config

COMMANDS = ("prep-fidelity", "storage", "parity", "gate-design", "fit", "detect-calib")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dfsmem", description="Decoherence-free quantum memory simulations.")
    p.add_argument("--version", action="version", version=f"dfsmem {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    helps = {
        "prep-fidelity": "noisy logical Bell-state preparation and its MC fidelity",
        "storage": "storage-lifetime scan with the exponential MLE fit",
        "parity": "parity oscillation of a first- or second-order DFS state",
        "gate-design": "segmented phase-modulation gate solve and drift scan",
        "fit": "MLE lifetime fit of a storage CSV",
        "detect-calib": "detection assignment accuracies and survival",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name], description=helps[name])
        if name == "fit":
            s.add_argument("--in", dest="infile", required=True, help="storage CSV")
        else:
            s.add_argument("--config", help="YAML config file (defaults if omitted)")
            s.add_argument("--seed", type=int, help="override run.seed")
        s.add_argument("--out", help="output directory (stdout if omitted)")
        s.add_argument("--format", choices=("csv", "json"), default="json")
    return p


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def to_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def to_csv(rows, columns=None) -> str:
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in columns)])
    return buf.getvalue()


def read_storage_csv(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    need = ("T", "k_success", "n_binom")
    if not rows or any(c not in rows[0] for c in need):
        raise ValidationError(f"{path}: need columns {', '.join(need)}")
    try:
        return [{"T": float(r["T"]), "k_success": float(r["k_success"]),
                 "n_binom": float(r["n_binom"])} for r in rows]
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _envelope(command: str, cfg: ExperimentConfig | None, result) -> dict:
    d = {"tool": "dfsmem", "version": __version__, "command": command, "result": result}
    if cfg is not None:
        d["seed"] = cfg.run.seed
        d["config"] = cfg.to_dict()
    return d


def _run(args) -> tuple[str, dict, list, tuple | None]:
    """Returns ``(stem, json_payload, csv_rows, csv_columns)``."""
    if args.command == "fit":
        rows = read_storage_csv(args.infile)
        fit = pipelines.fit_storage_rows(rows)
        return "fit", _envelope("fit", None, fit.to_dict()), [fit.to_dict() | {
            "ci68_lower": fit.ci68[0], "ci68_upper": fit.ci68[1]}], \
            ("a", "tau", "ci68_lower", "ci68_upper", "loglik", "n_points", "degenerate")

    cfg = load_config(args.config) if args.config else from_dict({})
    if args.seed is not None:
        cfg = cfg.replace(run={"seed": args.seed})
    if args.command == "prep-fidelity":
        rep = pipelines.run_prep_fidelity(cfg)
        return "prep_fidelity", _envelope(args.command, cfg, rep.to_dict()), rep.rows(), None
    if args.command == "storage":
        rep = pipelines.run_storage_scan(cfg)
        return ("storage", _envelope(args.command, cfg, rep.to_dict()), rep.rows,
                pipelines.STORAGE_COLUMNS)
    if args.command == "parity":
        rep = pipelines.run_parity_scan(cfg)
        return ("parity", _envelope(args.command, cfg, rep.to_dict()), rep.rows,
                pipelines.PARITY_COLUMNS)
    if args.command == "gate-design":
        res = pipelines.run_gate_design(cfg)
        rows = [{"ion_i": p["pair"][0], "ion_j": p["pair"][1], "theta": p["theta"],
                 "max_abs_alpha": p["max_abs_alpha"],
                 "bell_fidelity_ideal": p["bell_fidelity_ideal"],
                 "bell_fidelity_calibrated": p["bell_fidelity_calibrated"]}
                for p in res["pairs"]]
        return "gate_design", _envelope(args.command, cfg, res), rows, None
    if args.command == "detect-calib":
        rows = pipelines.run_detect_calibration(cfg)
        return ("detect_calib", _envelope(args.command, cfg, {"rows": rows}), rows,
                pipelines.DETECT_COLUMNS)
    raise _UsageError(f"unknown command {args.command!r}")  # pragma: no cover


def cli_main(argv=None) -> int:
    """Run the CLI; returns the exit status instead of exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        stem, payload, rows, cols = _run(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"dfsmem: error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"dfsmem: solver failure: {exc}", file=sys.stderr)
        return 2
    text = to_json(payload) if args.format == "json" else to_csv(rows, cols)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{stem}.{args.format}")
        with open(path, "w", newline="") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)
    return 0


def main() -> None:
    try:
        code = cli_main()
    except SystemExit as exc:  # --help / --version
        code = exc.code if isinstance(exc.code, int) else 0
    sys.exit(code)
