import numpy as np
import pytest

from dfsmem import circuits, noise
from dfsmem.experiments import pipelines as pl
from dfsmem.experiments.config import from_dict
from dfsmem.qstate import fidelity_pure, populations

X6 = np.asarray(noise._default_positions(6))


class TestCalibrations:
    def test_p2_round_trip(self):
        p2 = pl.calibrate_p2(0.991)
        assert pl.bell_test_fidelity(p2) == pytest.approx(0.991, abs=1e-12)
        assert p2 == pytest.approx(4 * (1 - 0.991) / 3, rel=1e-6)

    def test_gradient(self):
        g = pl.calibrate_gradient(3.716, X6)
        d = noise.detuning_vector(noise.FieldProfile(grad=g))
        assert abs(d[3] - d[2]) == pytest.approx(3.716)

    def test_curvature(self):
        c = pl.calibrate_curvature(9.9, X6)
        d = noise.detuning_vector(noise.FieldProfile(curv=c))
        assert 1 / abs(d[1] + d[4] - d[2] - d[3]) == pytest.approx(9.9)

    def test_ou_sigma(self):
        s = pl.calibrate_ou_sigma(27.6, 0.05, X6)
        rate = (2 * np.pi * s * (X6[3] - X6[2])) ** 2 * 0.05
        assert 1 / rate == pytest.approx(27.6)

    def test_clock_encoding_masks_fields(self):
        rn = pl.resolve_noise(from_dict({}))
        assert rn.model.sensitivity_mask == (0.0,) * 6
        assert pl.resolve_noise(from_dict({}), "sensitive").model.sensitivity_mask is None

    def test_explicit_values_not_calibrated(self):
        rn = pl.resolve_noise(from_dict({"noise": {"grad": 1.0, "curv": 0.0, "ou_sigma": 0.0}}))
        assert rn.calibrations == {}
        assert rn.profile.grad == 1.0


class TestPrep:
    def test_noiseless(self):
        rep = pl.run_prep_fidelity(from_dict({"gate": {"p2": 0.0}, "run": {"prep_shots": 50}}))
        assert rep.analytic.fidelity == pytest.approx(1, abs=1e-10)
        assert rep.estimate.fidelity == 1.0
        assert rep.coolant_zero_population == pytest.approx([1, 1], abs=1e-10)

    def test_phi_state(self):
        rep = pl.run_prep_fidelity(from_dict({"gate": {"p2": 0.0},
                                              "run": {"prep_shots": 20, "state": "phi+"}}))
        assert rep.analytic.fidelity == pytest.approx(1, abs=1e-10)
        assert rep.rows()[0]["state"] == "phi+"

    def test_prepare_returns_copy(self):
        a = pl.prepare_state("psi+")
        a.rho[:] = 0
        assert np.trace(pl.prepare_state("psi+").rho) == pytest.approx(1)

    def test_memory_handover(self):
        reg = pl.to_memory_qubits(pl.prepare_state("psi+"))
        assert [reg.type_label[s] for s in circuits.MEMORY_SITES] == ["F"] * 4
        assert [reg.type_label[s] for s in circuits.COOLANT_SITES] == ["S"] * 2
        assert fidelity_pure(reg, circuits.logical_state("psi+")) == pytest.approx(1, abs=1e-10)


def _small_storage(**run):
    base = {"times": [2.0, 120.0, 960.0], "shots": 40, "workers": 1}
    base.update(run)
    return base


class TestStorage:
    def test_flat_without_noise(self):
        cfg = from_dict({"noise": {"leak_rate": 0.0, "residual_dephasing": 0.0},
                         "run": _small_storage(detection_errors=False)})
        rep = pl.run_storage_scan(cfg, fit=False)
        for row in rep.rows:
            assert row["fidelity"] == 1.0
            assert row["survival"] == 1.0

    def test_leak_survival(self):
        cfg = from_dict({"noise": {"residual_dephasing": 0.0},
                         "run": _small_storage(times=[960.0], shots=300,
                                               detection_errors=False)})
        row = pl.run_storage_scan(cfg, fit=False).rows[0]
        expect = np.exp(-4 * noise.LEAK_RATE_PAPER * 960.0)
        sigma = np.sqrt(expect * (1 - expect) / row["raw"])
        assert abs(row["survival"] - expect) <= 4 * sigma

    def test_discard_accounting(self):
        rep = pl.run_storage_scan(from_dict({"run": _small_storage()}), fit=False)
        for row in rep.rows:
            assert row["kept"] == row["raw"] - row["discarded"]
            assert row["survival"] * row["raw"] == pytest.approx(row["kept"], abs=1e-9)
            assert row["raw"] == 3 * row["shots"]
            assert row["n_binom"] <= row["kept"]
            assert 0 <= row["k_success"] <= row["n_binom"]

    def test_columns(self):
        rep = pl.run_storage_scan(from_dict({"run": _small_storage()}), fit=False)
        assert tuple(rep.rows[0]) == pl.STORAGE_COLUMNS

    def test_deterministic(self):
        cfg = from_dict({"run": _small_storage(seed=7)})
        a = pl.run_storage_scan(cfg).to_dict()
        b = pl.run_storage_scan(cfg).to_dict()
        assert a == b

    def test_worker_count_independent(self):
        a = pl.run_storage_scan(from_dict({"run": _small_storage(seed=3, workers=1)}), fit=False)
        b = pl.run_storage_scan(from_dict({"run": _small_storage(seed=3, workers=2)}), fit=False)
        assert a.rows == b.rows

    def test_lifetime_round_trip_order_of_magnitude(self):
        # defaults: residual dephasing 5e-5 per ion gives a 5000 s coherence lifetime
        rep = pl.run_storage_scan(from_dict({"run": {"seed": 0}}))
        assert 1e3 <= rep.fit.ci68[0] <= 5e4
        assert 0.8 <= rep.fit.a <= 1.0


class TestParity:
    def test_trace_matches_register_pipeline(self):
        psi, sites = pl.dfs_state(2)
        rho0 = np.outer(psi, psi.conj())
        d = noise.detuning_vector(noise.FieldProfile(b0=1.0, grad=0.3, curv=0.2,
                                                     positions=tuple(X6[list(sites)])))
        t = np.array([0.0, 0.7, 3.1])
        fast = pl.parity_trace(rho0, 2 * np.pi * np.outer(t, d), 0.4)
        from dfsmem.estimators import parity_expectation
        from dfsmem.qstate import Register, apply_unitary
        for ti, f in zip(t, fast):
            reg = Register.from_density(rho0, ["M"] * 4)
            apply_unitary(reg, noise.dephasing_unitary(d, ti), [0, 1, 2, 3])
            assert f == pytest.approx(parity_expectation(reg, 0.4), abs=1e-12)

    def test_b0_only_flat(self):
        cfg = from_dict({"noise": {"b0": 37.0, "grad": 0.0, "curv": 0.0, "ou_sigma": 0.0,
                                   "common_sigma": 0.0},
                         "run": {"dfs_order": 2, "windows": [[0.0, 12.0]], "parity_dt": 0.05}})
        rows = pl.run_parity_scan(cfg, fit=False).rows
        assert np.max(np.abs(np.array([r["parity"] for r in rows]) - 1)) <= 1e-9

    def test_linear_gradient_flat_for_order_two(self):
        cfg = from_dict({"noise": {"curv": 0.0, "ou_sigma": 0.0, "common_sigma": 0.0},
                         "run": {"dfs_order": 2, "windows": [[0.0, 12.0]], "parity_dt": 0.05}})
        p = np.array([r["parity"] for r in pl.run_parity_scan(cfg, fit=False).rows])
        assert np.ptp(p) <= 1e-9

    def test_first_order_period(self):
        cfg = from_dict({"noise": {"ou_sigma": 0.0, "common_sigma": 0.0},
                         "run": {"dfs_order": 1, "windows": [[0.0, 2.0]]}})
        rep = pl.run_parity_scan(cfg)
        assert rep.fit.period == pytest.approx(0.2691, rel=0.01)

    def test_deterministic_with_ou(self):
        cfg = from_dict({"run": {"dfs_order": 1, "windows": [[0.0, 1.0]],
                                 "parity_trajectories": 20, "seed": 5}})
        a = pl.run_parity_scan(cfg).rows
        b = pl.run_parity_scan(cfg).rows
        assert a == b

    def test_window_grid(self):
        t, w = pl._parity_grid([[0.0, 0.35], [6.0, 6.35]], 0.005)
        assert t.size == 2 * 71
        assert t[0] == 0.0 and t[-1] == pytest.approx(6.35)
        assert set(w.tolist()) == {0, 1}


class TestDetectCalibration:
    def test_rows(self):
        rows = pl.run_detect_calibration(from_dict({"run": {"detect_trials": 20000}}))
        assert [r["quantity"] for r in rows][:3] == ["accuracy_Zero", "accuracy_One",
                                                     "accuracy_Leak"]
        for r in rows:
            assert abs(r["value"] - r["expected"]) <= 4 * max(r["sigma"], 1e-12)
