import csv
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dfsmem.detection import (BRIGHT, DARK, EARLY_LOSS, LEAK, ONE, ZERO, AssignmentModel,
                              DetectionRecord, assignment_accuracy, decode, decode_batch,
                              detect, detect_batch, postselect, records_to_csv,
                              simulate_records, survival_curve)
from dfsmem.errors import UndefinedStatistic, ValidationError
from dfsmem.noise import LEAK_RATE_PAPER

B, D = BRIGHT, DARK


class TestDecode:
    @pytest.mark.parametrize("pattern,symbol", [
        ((B, D, D, D), EARLY_LOSS),
        ((B, B, B, B), EARLY_LOSS),
        ((D, B, D, D), ZERO),
        ((D, B, B, B), ZERO),
        ((D, D, B, D), LEAK),
        ((D, D, B, B), LEAK),
        ((D, D, D, B), ONE),
        ((D, D, D, D), LEAK),
    ])
    def test_table(self, pattern, symbol):
        assert decode(pattern) == symbol

    def test_wrong_length(self):
        with pytest.raises(ValidationError):
            decode((D, B, D))

    def test_batch_matches_scalar(self):
        pats = np.array(np.meshgrid(*[[False, True]] * 4, indexing="ij")).reshape(4, -1).T
        codes = decode_batch(pats)
        names = (ZERO, ONE, LEAK, EARLY_LOSS)
        for p, c in zip(pats, codes):
            assert names[c] == decode([B if b else D for b in p])


class TestDetect:
    def test_perfect_patterns(self):
        rec = detect([ZERO, ONE, LEAK], AssignmentModel.perfect(), rng_seed=0)
        assert rec.decoded == (ZERO, ONE, LEAK)
        assert rec.stages[0] == (D, B, D, D)
        assert rec.stages[1] == (D, D, D, B)
        assert rec.stages[2] in ((D, D, B, D), (D, D, D, D))
        assert not rec.kept

    def test_stage3_fraction(self):
        pats = detect_batch(np.full(100_000, 2), AssignmentModel.perfect(), 1)
        assert pats[:, 2].mean() == pytest.approx(0.5, abs=0.01)

    @pytest.mark.parametrize("symbol,attr", [(ZERO, "f0"), (ONE, "f1")])
    def test_assignment_accuracy(self, symbol, attr):
        model = AssignmentModel()
        acc = assignment_accuracy(symbol, model, 100_000, rng_seed=3)
        assert acc == pytest.approx(getattr(model, attr), abs=3e-3)

    def test_leak_identification(self):
        model = AssignmentModel(leak_id=0.8)
        assert assignment_accuracy(LEAK, model, 100_000, rng_seed=4) == pytest.approx(0.8, abs=5e-3)

    def test_early_loss(self):
        model = AssignmentModel(p_early=0.2)
        dec = decode_batch(detect_batch(np.zeros(50_000, dtype=int), model, 5))
        assert np.mean(dec == 3) == pytest.approx(0.2, abs=0.01)

    def test_model_validation(self):
        with pytest.raises(ValidationError):
            AssignmentModel(f0=1.2)


class TestPostselect:
    def test_empty(self):
        with pytest.raises(UndefinedStatistic):
            postselect([])

    def test_survival_matches_leak_probability(self):
        p = -np.expm1(-LEAK_RATE_PAPER * 960.0)
        recs = simulate_records(20_000, p, AssignmentModel.perfect(), rng_seed=6)
        kept, surv = postselect(recs)
        assert surv == pytest.approx((1 - p) ** 4, abs=0.015)
        assert surv == pytest.approx(0.54, abs=0.015)
        assert all(r.kept for r in kept)

    def test_kept_records_have_no_leak(self):
        recs = simulate_records(2000, 0.3, AssignmentModel(), rng_seed=7)
        kept, _ = postselect(recs)
        for r in kept:
            assert LEAK not in r.decoded and EARLY_LOSS not in r.decoded

    @given(seed=st.integers(0, 2 ** 32 - 1), p=st.floats(0.0, 0.5))
    def test_discard_independent_of_qubit_value(self, seed, p):
        # with perfect readout, survival depends only on the leak pattern
        model = AssignmentModel.perfect()
        a = simulate_records(400, p, model, rng_seed=seed, p_one=0.0)
        b = simulate_records(400, p, model, rng_seed=seed, p_one=1.0)
        assert [r.kept for r in a] == [r.kept for r in b]


class TestSurvivalCurve:
    def test_values(self):
        s = survival_curve(LEAK_RATE_PAPER, [0.0, 800.0])
        assert s[0] == 1.0
        assert s[1] == pytest.approx(0.88 ** 4)

    def test_monotone(self):
        s = survival_curve(1e-3, np.linspace(0, 1000, 11))
        assert np.all(np.diff(s) < 0)

    def test_negative_rate(self):
        with pytest.raises(ValidationError):
            survival_curve(-1.0, [1.0])


class TestCsv:
    def test_header_and_rows(self):
        recs = simulate_records(5, 0.1, AssignmentModel(), rng_seed=8)
        rows = list(csv.reader(io.StringIO(records_to_csv(recs))))
        assert rows[0][:4] == ["ion0_stage1", "ion0_stage2", "ion0_stage3", "ion0_stage4"]
        assert rows[0][-1] == "kept"
        assert len(rows[0]) == 4 * 4 + 4 + 1
        assert len(rows) == 6
        for r, rec in zip(rows[1:], recs):
            assert r[16:20] == list(rec.decoded)
            assert int(r[-1]) == int(rec.kept)

    def test_empty(self):
        with pytest.raises(UndefinedStatistic):
            records_to_csv([])

    def test_record_kept_flag(self):
        rec = DetectionRecord(((D, B, D, D),), (ZERO,))
        assert rec.kept
