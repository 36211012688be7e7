"""Four-stage multi-state detection, decoding and post-selection.

Each ion is read in four fluorescence stages (Dark/Bright):

I    S-state check: Bright means the ion left the F manifold (EarlyLoss).
II   after shelving ``|0_F>``: Bright means Zero.
III  leak-level probe: Bright flags part of the leaked population.
IV   after a microwave pi pulse and shelving: Bright means One, Dark means Leak.

Lookup table (first Bright stage wins)::

    (B, ., ., .) -> EarlyLoss
    (D, B, ., .) -> Zero
    (D, D, B, .) -> Leak
    (D, D, D, B) -> One
    (D, D, D, D) -> Leak

Assignment errors are lumped: a true Zero fails with probability ``1 - f0``
and then reads as One; a true One fails with ``1 - f1`` and reads as Zero;
a true leak is flagged with probability ``leak_id`` (routed to stage III
with probability ``stage3_fraction``, otherwise to the dark stage IV) and
otherwise reads as One.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UndefinedStatistic, ValidationError

ZERO, ONE, LEAK, EARLY_LOSS = "Zero", "One", "Leak", "EarlyLoss"
SYMBOLS = (ZERO, ONE, LEAK, EARLY_LOSS)
SYMBOLS_TRUE = {0: ZERO, 1: ONE, 2: LEAK}
DARK, BRIGHT = "D", "B"

# Stage patterns (True = Bright) used by the simulation.
_PATTERN = {
    "early": (True, False, False, False),
    "zero": (False, True, False, False),
    "leak3": (False, False, True, False),
    "one": (False, False, False, True),
    "leak4": (False, False, False, False),
}


@dataclass(frozen=True)
class AssignmentModel:
    """Lumped readout fidelities.

    f0, f1 : probability of a correct assignment for true Zero / One.
    leak_id : probability a true leak is flagged as Leak.
    stage3_fraction : share of flagged leaks that light up in stage III.
    p_early : probability an ion is found back in S (stage I bright).
    """

    f0: float = 0.996
    f1: float = 0.981
    leak_id: float = 1.0
    stage3_fraction: float = 0.5
    p_early: float = 0.0

    def __post_init__(self):
        for name in ("f0", "f1", "leak_id", "stage3_fraction", "p_early"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"detection.{name} must lie in [0, 1], got {v}")

    @classmethod
    def perfect(cls) -> "AssignmentModel":
        return cls(1.0, 1.0, 1.0, 0.5, 0.0)


@dataclass(frozen=True)
class DetectionRecord:
    """Stage outcomes and decoded symbols for a group of ions."""

    stages: tuple  # per ion: 4-tuple over {"D", "B"}
    decoded: tuple

    @property
    def kept(self) -> bool:
        return not any(s in (LEAK, EARLY_LOSS) for s in self.decoded)


def decode(pattern: Sequence[str]) -> str:
    """Table lookup of one ion's 4-stage pattern."""
    if len(pattern) != 4:
        raise ValidationError("a detection pattern has four stages")
    bright = [p in (BRIGHT, True, 1) for p in pattern]
    if bright[0]:
        return EARLY_LOSS
    if bright[1]:
        return ZERO
    if bright[2]:
        return LEAK
    if bright[3]:
        return ONE
    return LEAK


_CODE = {ZERO: 0, ONE: 1, LEAK: 2}


def detect_batch(true_codes: np.ndarray, model: AssignmentModel, rng) -> np.ndarray:
    """Vectorized stage patterns for an integer array of true symbols.

    ``true_codes`` uses 0 = Zero, 1 = One, 2 = Leak; the result has an extra
    trailing axis of length 4 (True = Bright).
    """
    rng = np.random.default_rng(rng)
    t = np.asarray(true_codes)
    u = rng.random(t.shape + (3,))
    early = u[..., 0] < model.p_early
    key = np.full(t.shape, "", dtype="<U5")
    z_ok = u[..., 1] < model.f0
    o_ok = u[..., 1] < model.f1
    l_ok = u[..., 1] < model.leak_id
    l3 = u[..., 2] < model.stage3_fraction
    key = np.where(t == 0, np.where(z_ok, "zero", "one"), key)
    key = np.where(t == 1, np.where(o_ok, "one", "zero"), key)
    key = np.where(t == 2, np.where(l_ok, np.where(l3, "leak3", "leak4"), "one"), key)
    key = np.where(early, "early", key)
    out = np.zeros(t.shape + (4,), dtype=bool)
    for name, pat in _PATTERN.items():
        out[key == name] = pat
    return out


def decode_batch(patterns: np.ndarray) -> np.ndarray:
    """Vectorized :func:`decode`; returns codes 0 Zero, 1 One, 2 Leak, 3 EarlyLoss."""
    p = np.asarray(patterns, dtype=bool)
    out = np.full(p.shape[:-1], 2)
    out = np.where(p[..., 3], 1, out)
    out = np.where(p[..., 2], 2, out)
    out = np.where(p[..., 1], 0, out)
    out = np.where(p[..., 0], 3, out)
    return out


_DECODED = (ZERO, ONE, LEAK, EARLY_LOSS)


def detect(true_symbols: Sequence[str], model: AssignmentModel, rng_seed=None) -> DetectionRecord:
    """Simulate the detection protocol for a group of ions."""
    codes = np.array([_CODE[s] for s in true_symbols])
    pats = detect_batch(codes, model, rng_seed)
    stages = tuple(tuple(BRIGHT if b else DARK for b in row) for row in pats)
    return DetectionRecord(stages, tuple(decode(s) for s in stages))


def postselect(records: Sequence[DetectionRecord]):
    """Keep records without Leak/EarlyLoss; returns ``(kept, survival)``."""
    if len(records) == 0:
        raise UndefinedStatistic("postselect needs at least one record")
    kept = [r for r in records if r.kept]
    return kept, len(kept) / len(records)


def survival_curve(leak_rate: float, times, n_ions: int = 4) -> list[float]:
    """Analytic probability that none of ``n_ions`` leaked: ``exp(-n rate T)``."""
    if leak_rate < 0:
        raise ValidationError("leak_rate must be >= 0")
    return [float(np.exp(-n_ions * leak_rate * t)) for t in times]


def simulate_records(n_trials: int, leak_prob: float, model: AssignmentModel, rng_seed=None,
                     n_ions: int = 4, p_one: float = 0.5) -> list[DetectionRecord]:
    """Random trials: each ion leaked with ``leak_prob``, else One with ``p_one``."""
    rng = np.random.default_rng(rng_seed)
    leaked = rng.random((n_trials, n_ions)) < leak_prob
    one = rng.random((n_trials, n_ions)) < p_one
    codes = np.where(leaked, 2, one.astype(int))
    pats = detect_batch(codes, model, rng)
    dec = decode_batch(pats)
    out = []
    for k in range(n_trials):
        stages = tuple(tuple(BRIGHT if b else DARK for b in row) for row in pats[k])
        out.append(DetectionRecord(stages, tuple(_DECODED[c] for c in dec[k])))
    return out


def records_to_csv(records: Sequence[DetectionRecord]) -> str:
    """One row per trial: stage bits (1 = Bright), decoded symbols, kept flag."""
    if not records:
        raise UndefinedStatistic("no records to serialize")
    n = len(records[0].decoded)
    header = [f"ion{i}_stage{s}" for i in range(n) for s in range(1, 5)]
    header += [f"ion{i}_decoded" for i in range(n)] + ["kept"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in records:
        bits = [int(b == BRIGHT) for st in r.stages for b in st]
        w.writerow(bits + list(r.decoded) + [int(r.kept)])
    return buf.getvalue()


def assignment_accuracy(symbol: str, model: AssignmentModel, n_trials: int, rng_seed=None) -> float:
    """Fraction of single-ion trials decoding to the true ``symbol``."""
    codes = np.full(n_trials, _CODE[symbol])
    dec = decode_batch(detect_batch(codes, model, rng_seed))
    return float(np.mean(dec == _CODE[symbol]))
