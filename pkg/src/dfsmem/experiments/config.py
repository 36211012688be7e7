"""Experiment configuration: YAML file with ``chain``, ``noise``, ``gate`` and ``run`` sections.

All quantities are SI (Hz, s).  Every key has a default, so an empty file
(or one holding only ``run: {seed: 7}``) is a valid configuration.  Keys
left ``null`` are calibrated at run time (see :mod:`.pipelines`).  Unknown
sections or keys are rejected with an error naming the offending key.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np
import yaml

from ..errors import ValidationError
from ..gatedesign import PAPER_MODE_FREQS
from ..noise import LEAK_RATE_PAPER

PAPER_TIMES = (2.0, 30.0, 60.0, 120.0, 240.0, 960.0)
PAPER_SHOTS = (250, 80, 70, 60, 50, 30)


@dataclass
class ChainConfig:
    n_ions: int = 6
    transverse_com_freq: float = 1.458e6
    axial_freq: float | None = None  # None: fitted to the measured mode list
    measured_mode_freqs: list = field(default_factory=lambda: list(PAPER_MODE_FREQS))
    use_measured_modes: bool = True


@dataclass
class NoiseConfig:
    leak_rate: float = float(LEAK_RATE_PAPER)
    residual_dephasing: float = 5e-5  # 1/s per ion; psi+ coherence decays as exp(-4 rate T)
    b0: float = 50.0  # uniform detuning (Hz)
    grad: float | None = None  # Hz per unit position; None: from first_order_splitting
    curv: float | None = None  # Hz per unit position^2; None: from second_order_period
    first_order_splitting: float = 3.716  # Hz, |delta_2 - delta_3|
    second_order_period: float = 9.9  # s
    ou_sigma: float | None = None  # gradient OU RMS (Hz/unit); None: from ou_decay_time
    ou_decay_time: float = 27.6  # s, first-order parity decay time used for calibration
    ou_tau: float = 0.05  # s
    common_sigma: float = 1.0  # Hz
    f0: float = 0.996
    f1: float = 0.981
    leak_id: float = 1.0
    stage3_fraction: float = 0.5


@dataclass
class GateConfig:
    p1: float = 0.0
    p2: float | None = None  # None: calibrated to bell_fidelity
    bell_fidelity: float = 0.991
    mu: float = 1.337e6
    t_gate: float = 150e-6
    n_segments: int = 24
    antisymmetric: bool = True
    target_theta: float = float(np.pi / 10)
    robust_band: list = field(default_factory=lambda: [-1e3, -500.0, 500.0, 1e3])
    n_restarts: int = 8
    nbar: float = 0.1
    pairs: list = field(default_factory=lambda: [[2, 3]])
    drift_scan: list = field(default_factory=lambda: [-1e3, -200.0, 0.0, 200.0, 1e3])
    carrier_detuning: float = 26e6  # Hz; recorded only, the effective force model ignores it


@dataclass
class RunConfig:
    seed: int = 0
    times: list = field(default_factory=lambda: list(PAPER_TIMES))
    shots: list = field(default_factory=lambda: list(PAPER_SHOTS))
    prep_shots: int = 250
    state: str = "psi+"
    echo: bool = True
    encoding: str = "clock"
    dfs_order: int = 1
    n_steps: int = 200
    prep_noise: bool = False
    detection_errors: bool = True
    windows: list = field(default_factory=lambda: [[0.0, 0.35], [6.0, 6.35]])
    parity_dt: float = 0.005
    parity_phase: float = 0.0
    parity_trajectories: int = 200
    workers: int | None = None  # None: available cores
    detect_trials: int = 100000


@dataclass
class ExperimentConfig:
    chain: ChainConfig = field(default_factory=ChainConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``replace(run={"seed": 3})``."""
        d = self.to_dict()
        for sec, vals in sections.items():
            if sec not in d:
                raise ValidationError(f"unknown config section {sec!r}")
            d[sec].update(vals)
        return from_dict(d)

    @property
    def n_workers(self) -> int:
        return self.run.workers if self.run.workers else (os.cpu_count() or 1)


_SECTIONS = {"chain": ChainConfig, "noise": NoiseConfig, "gate": GateConfig, "run": RunConfig}


def _coerce(name: str, value: Any, default: Any, annotation: str):
    """Type-check ``value`` against the default/annotation of the field."""
    optional = "None" in annotation
    if value is None:
        if optional:
            return None
        raise ValidationError(f"{name} must not be null")
    if "bool" in annotation:
        if not isinstance(value, bool):
            raise ValidationError(f"{name} must be true/false")
        return value
    if annotation.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise ValidationError(f"{name} must be an integer")
        return int(value)
    if annotation.startswith("float"):
        if isinstance(value, str):
            # YAML 1.1 reads unsigned exponents (1.5e6, unlike 1.5e+6) as strings
            try:
                value = float(value)
            except ValueError:
                raise ValidationError(f"{name} must be a number") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{name} must be a number")
        if not np.isfinite(value):
            raise ValidationError(f"{name} must be finite")
        return float(value)
    if annotation == "str":
        if not isinstance(value, str):
            raise ValidationError(f"{name} must be a string")
        return value
    if annotation == "list":
        if isinstance(value, (int, float)) and not isinstance(value, bool) and name == "run.shots":
            return value
        if not isinstance(value, (list, tuple)):
            raise ValidationError(f"{name} must be a list")
        return list(value)
    return value


def _require(cond: bool, key: str, msg: str):
    if not cond:
        raise ValidationError(f"{key}: {msg}")


def _number_list(key, xs):
    try:
        arr = np.asarray(xs, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{key}: must be a list of numbers") from exc
    _require(np.all(np.isfinite(arr)), key, "entries must be finite")
    return arr


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Range checks across all sections; returns ``cfg`` (shots broadcast to a list)."""
    c, n, g, r = cfg.chain, cfg.noise, cfg.gate, cfg.run
    _require(c.n_ions >= 2, "chain.n_ions", "must be >= 2")
    _require(c.transverse_com_freq > 0, "chain.transverse_com_freq", "must be > 0")
    _require(c.axial_freq is None or 0 < c.axial_freq < c.transverse_com_freq,
             "chain.axial_freq", "must lie in (0, transverse_com_freq)")
    freqs = _number_list("chain.measured_mode_freqs", c.measured_mode_freqs)
    _require(freqs.size == c.n_ions and np.all(freqs > 0), "chain.measured_mode_freqs",
             "needs n_ions positive entries")
    c.measured_mode_freqs = freqs.tolist()

    for key in ("leak_rate", "residual_dephasing", "ou_tau", "common_sigma",
                "first_order_splitting", "second_order_period", "ou_decay_time"):
        _require(getattr(n, key) >= 0, f"noise.{key}", "must be >= 0")
    for key in ("ou_tau", "second_order_period", "ou_decay_time"):
        _require(getattr(n, key) > 0, f"noise.{key}", "must be > 0")
    _require(n.ou_sigma is None or n.ou_sigma >= 0, "noise.ou_sigma", "must be >= 0")
    for key in ("f0", "f1", "leak_id", "stage3_fraction"):
        _require(0 <= getattr(n, key) <= 1, f"noise.{key}", "must lie in [0, 1]")

    _require(0 <= g.p1 <= 1, "gate.p1", "must lie in [0, 1]")
    _require(g.p2 is None or 0 <= g.p2 <= 1, "gate.p2", "must lie in [0, 1]")
    _require(0.25 <= g.bell_fidelity <= 1, "gate.bell_fidelity", "must lie in [0.25, 1]")
    _require(g.mu > 0 and g.t_gate > 0, "gate.mu", "mu and t_gate must be > 0")
    _require(g.n_segments >= 2 and g.n_segments % 2 == 0, "gate.n_segments", "must be even and >= 2")
    _require(g.n_restarts >= 1, "gate.n_restarts", "must be >= 1")
    _require(g.nbar >= 0, "gate.nbar", "must be >= 0")
    _require(g.target_theta > 0, "gate.target_theta", "must be > 0")
    g.robust_band = _number_list("gate.robust_band", g.robust_band).tolist()
    g.drift_scan = _number_list("gate.drift_scan", g.drift_scan).tolist()
    for p in g.pairs:
        _require(isinstance(p, (list, tuple)) and len(p) == 2 and p[0] != p[1]
                 and all(isinstance(i, int) and 0 <= i < c.n_ions for i in p),
                 "gate.pairs", f"invalid ion pair {p!r}")
    g.pairs = [list(p) for p in g.pairs]

    _require(0 <= r.seed < 2 ** 64, "run.seed", "must lie in [0, 2**64)")
    times = _number_list("run.times", r.times)
    _require(times.size >= 1, "run.times", "must not be empty")
    _require(np.all(times >= 0) and np.all(np.diff(times) > 0), "run.times",
             "must be non-negative and strictly ascending")
    r.times = times.tolist()
    shots = r.shots if isinstance(r.shots, list) else [r.shots] * times.size
    _require(len(shots) == times.size, "run.shots", "needs one entry per storage time")
    _require(all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in shots),
             "run.shots", "shot counts must be integers >= 1")
    r.shots = list(shots)
    _require(r.prep_shots >= 1, "run.prep_shots", "must be >= 1")
    _require(r.state in ("psi+", "phi+"), "run.state", "must be 'psi+' or 'phi+'")
    _require(r.encoding in ("clock", "sensitive"), "run.encoding", "must be 'clock' or 'sensitive'")
    _require(r.dfs_order in (1, 2), "run.dfs_order", "must be 1 or 2")
    _require(r.n_steps >= 2 and r.n_steps % 2 == 0, "run.n_steps", "must be even and >= 2")
    _require(r.parity_dt > 0, "run.parity_dt", "must be > 0")
    _require(r.parity_trajectories >= 1, "run.parity_trajectories", "must be >= 1")
    _require(r.workers is None or r.workers >= 1, "run.workers", "must be >= 1")
    _require(r.detect_trials >= 1, "run.detect_trials", "must be >= 1")
    _require(len(r.windows) >= 1, "run.windows", "must not be empty")
    wins = []
    for w in r.windows:
        arr = _number_list("run.windows", w)
        _require(arr.size == 2 and 0 <= arr[0] < arr[1], "run.windows",
                 f"window {w!r} must be [start, stop] with 0 <= start < stop")
        wins.append(arr.tolist())
    r.windows = wins
    return cfg


def from_dict(data: dict | None) -> ExperimentConfig:
    """Build and validate a config from nested dicts (missing keys take defaults)."""
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ValidationError("config root must be a mapping of sections")
    sections = {}
    for sec, values in data.items():
        if sec not in _SECTIONS:
            raise ValidationError(f"unknown config section {sec!r}")
        values = {} if values is None else values
        if not isinstance(values, dict):
            raise ValidationError(f"section {sec!r} must be a mapping")
        cls = _SECTIONS[sec]
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, val in values.items():
            if key not in known:
                raise ValidationError(f"unknown config key {sec}.{key}")
            f = known[key]
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            kwargs[key] = _coerce(f"{sec}.{key}", val, default, str(f.type))
        sections[sec] = cls(**kwargs)
    return validate(ExperimentConfig(**sections))


def load_config(path) -> ExperimentConfig:
    """Read a YAML config file; see the module docstring for the schema."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}") from exc
    return from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
