"""Acceptance criteria 1-10.

Each test records one ``PASS``/``FAIL criterion N: ...`` line, printed
immediately (visible with ``-s``) and again in the pytest terminal summary.
"""

import contextlib
import io
import time
from pathlib import Path

import numpy as np

import conftest
from conftest import random_density
from dfsmem import circuits, detection, gatedesign as gd, noise
from dfsmem.estimators import ghz_fidelity
from dfsmem.experiments import pipelines as pl
from dfsmem.experiments.cli import cli_main
from dfsmem.experiments.config import PAPER_SHOTS, PAPER_TIMES, from_dict
from dfsmem.experiments.fitting import mle_fit_exponential
from dfsmem.qstate import (Register, apply_kraus, embed_qubit_density, fidelity_pure,
                           outcome_probabilities, populations)

PAPER_CFG = Path(__file__).resolve().parents[1] / "configs" / "paper.yaml"
PSI_PLUS_4 = circuits.logical_state("psi+", with_coolants=False)


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    conftest.ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


@contextlib.contextmanager
def criterion(n):
    try:
        yield
    except AssertionError:
        raise
    except Exception as exc:  # an error is a failed criterion, not a silent one
        record(n, False, f"raised {type(exc).__name__}: {exc}")


def test_criterion_01_decomposition_identity():
    with criterion(1):
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(1000):
            reg = Register.from_density(embed_qubit_density(random_density(4, rng)), ["M"] * 4)
            worst = max(worst, abs(ghz_fidelity(reg).fidelity - fidelity_pure(reg, PSI_PLUS_4)))
        dt = time.perf_counter() - t0
        record(1, worst <= 1e-9 and dt < 10,
               f"max |F_decomp - F| = {worst:.2e} (<= 1e-9) over 1000 states in {dt:.1f} s (< 10 s)")


def test_criterion_02_ideal_prep():
    with criterion(2):
        worst_f, worst_c = 0.0, 0.0
        for target in circuits.TARGETS:
            reg = pl.prepare_state(target)
            worst_f = max(worst_f, abs(1 - fidelity_pure(reg, circuits.logical_state(target))))
            for s in circuits.COOLANT_SITES:
                worst_c = max(worst_c, abs(1 - populations(reg, s)[0]))
        record(2, worst_f <= 1e-9 and worst_c <= 1e-9,
               f"{'/'.join(circuits.TARGETS)}: max 1-F = {worst_f:.1e}, "
               f"max coolant 1-P(0) = {worst_c:.1e} (<= 1e-9)")


def test_criterion_03_calibrated_prep_bracket():
    with criterion(3):
        rep = pl.run_prep_fidelity(from_dict({"run": {"seed": 0, "prep_shots": 250}}))
        f = rep.estimate.fidelity
        record(3, 0.93 <= f <= 0.975,
               f"MC psi+ fidelity {f:.4f} +- {rep.estimate.fidelity_err:.4f} at M=250/term "
               f"(analytic {rep.analytic.fidelity:.4f}, p2 = {rep.gate_noise['p2']:.5f}) "
               f"in [0.93, 0.975]")


def test_criterion_04_global_noise_immunity():
    with criterion(4):
        worst = 0.0
        for target in circuits.TARGETS:
            for b0 in (1e-3, 3.7, 50.0, 1e4):
                for echo in (True, False):
                    reg = pl.to_memory_qubits(pl.prepare_state(target))
                    noise.storage_evolution(reg, 123.4, noise.NoiseModel(),
                                            noise.FieldProfile(b0=b0), echo=echo)
                    worst = max(worst, abs(1 - fidelity_pure(reg, circuits.logical_state(target))))
        record(4, worst <= 1e-10,
               f"b0-only storage, 4 states x 4 magnitudes x echo on/off: max 1-F = {worst:.1e} "
               f"(<= 1e-10)")


def test_criterion_05_second_vs_first_order():
    with criterion(5):
        t0 = time.perf_counter()
        lin = from_dict({"noise": {"curv": 0.0, "ou_sigma": 0.0, "common_sigma": 0.0},
                         "run": {"dfs_order": 2, "windows": [[0.0, 12.0]], "parity_dt": 0.01}})
        p = np.array([r["parity"] for r in pl.run_parity_scan(lin, fit=False).rows])
        flat = float(np.ptp(p))
        first = from_dict({"noise": {"ou_sigma": 0.0, "common_sigma": 0.0},
                           "run": {"dfs_order": 1, "windows": [[0.0, 2.0]]}})
        p1 = pl.run_parity_scan(first).fit.period
        second = from_dict({"noise": {"ou_sigma": 0.0, "common_sigma": 0.0},
                            "run": {"dfs_order": 2, "windows": [[0.0, 12.0]],
                                    "parity_dt": 0.01}})
        p2 = pl.run_parity_scan(second).fit.period
        dt = time.perf_counter() - t0
        ok = flat <= 1e-9 and abs(p1 / 0.2691 - 1) <= 0.01 and abs(p2 / 9.9 - 1) <= 0.02 and dt < 60
        record(5, ok, f"order-2 linear-gradient parity ptp {flat:.1e} (<= 1e-9); order-1 period "
                      f"{p1 * 1e3:.2f} ms (269.1 +- 1%); order-2 curvature period {p2:.4f} s "
                      f"(9.9 +- 2%); {dt:.1f} s (< 60 s)")


def test_criterion_06_leakage_survival():
    with criterion(6):
        rng = np.random.default_rng(6)
        trials = 10_000
        # four-ion survival: Born-rule samples of the stored register, perfect readout
        reg = pl.to_memory_qubits(pl.prepare_state("psi+"))
        noise.storage_evolution(reg, 960.0, noise.NoiseModel(leak_rate=noise.LEAK_RATE_PAPER),
                                noise.FieldProfile())
        probs = outcome_probabilities(reg, circuits.MEMORY_SITES)
        idx = rng.choice(probs.size, size=trials, p=probs / probs.sum())
        digits = (idx[:, None] // 3 ** np.arange(4)[None, :]) % 3
        pats = detection.detect_batch(digits, detection.AssignmentModel.perfect(), rng)
        kept = np.all(detection.decode_batch(pats) < 2, axis=1)
        surv = float(kept.mean())
        # single ion, 800 s
        one = Register.from_state(np.array([0.0, 1.0, 0.0]))
        apply_kraus(one, noise.leakage_kraus(noise.LEAK_RATE_PAPER, 800.0), [0])
        p_leak = float(populations(one, 0)[2])
        leaks = rng.binomial(trials, p_leak) / trials
        sig = np.sqrt(0.12 * 0.88 / trials)
        ok = abs(surv - 0.54) <= 0.02 and abs(p_leak - 0.12) <= 1e-12 and abs(leaks - 0.12) <= 3 * sig
        record(6, ok, f"MC four-ion survival at 960 s = {surv:.4f} (0.54 +- 0.02, 1e4 trials); "
                      f"single-ion 800 s leak p = {p_leak:.4f}, sampled {leaks:.4f} "
                      f"(0.12 +- {3 * sig:.4f})")


def test_criterion_07_detection_decoder():
    with criterion(7):
        model = detection.AssignmentModel(f0=0.996, f1=0.981)
        n = 100_000
        parts, ok = [], True
        for sym, f, seed in ((detection.ZERO, 0.996, 70), (detection.ONE, 0.981, 71)):
            acc = detection.assignment_accuracy(sym, model, n, rng_seed=seed)
            bound = 3 * np.sqrt(f * (1 - f) / n)
            ok &= abs(acc - f) <= bound
            parts.append(f"{sym} {acc:.5f} ({f} +- {bound:.5f})")
        record(7, bool(ok), "assignment accuracy at 1e5 trials: " + ", ".join(parts))


def test_criterion_08_mle_coverage():
    with criterion(8):
        rng = np.random.default_rng(8)
        p = 0.5 * (1 + 0.906 * np.exp(-np.asarray(PAPER_TIMES) / 5000.0))
        hits, lowers = 0, []
        for _ in range(1000):
            k = rng.binomial(PAPER_SHOTS, p)
            lo, hi = mle_fit_exponential(list(zip(PAPER_TIMES, k, PAPER_SHOTS))).ci68
            hits += lo <= 5000.0 <= hi
            lowers.append(lo)
        cov = hits / 1000
        ones = mle_fit_exponential([(t, n, n) for t, n in zip(PAPER_TIMES, PAPER_SHOTS)])
        ok = 0.63 <= cov <= 0.73 and np.isfinite(ones.ci68[0]) and np.isinf(ones.ci68[1])
        record(8, ok, f"68% CI coverage {cov:.3f} over 1000 datasets (in [0.63, 0.73]), median "
                      f"tau_lower {np.median(lowers):.0f} s; all-ones CI = "
                      f"({ones.ci68[0]:.0f}, {ones.ci68[1]}) s")


def test_criterion_09_gate_design():
    with criterion(9):
        t0 = time.perf_counter()
        chain = gd.build_chain()
        sol = gd.solve_phases(chain, (2, 3), mu=1.337e6, t_gate=150e-6, n_segments=24,
                              antisymmetric=True)
        dt = time.perf_counter() - t0
        alpha = float(np.max(np.abs(gd.final_displacements(sol, chain))))
        theta = gd.geometric_phase(sol, chain)
        # symmetric phases need 26 segments to close all six modes (global-phase gauge)
        base = gd.solve_phases(chain, (2, 3), mu=1.337e6, t_gate=150e-6, n_segments=26,
                               parameterization="symmetric")
        anti = gd.robustness_scan(sol, chain, [-1e3, 1e3])
        sym = gd.robustness_scan(base, chain, [-1e3, 1e3])
        ok = alpha <= 1e-6 and abs(theta - np.pi / 10) <= 1e-6 and np.all(anti < sym) and dt < 30
        record(9, bool(ok),
               f"max|alpha_k| = {alpha:.1e} (<= 1e-6), Theta - pi/10 = {theta - np.pi / 10:.1e}; "
               f"infidelity at -/+1 kHz {anti[0]:.2e}/{anti[1]:.2e} vs symmetric baseline "
               f"{sym[0]:.2e}/{sym[1]:.2e}; solve {dt:.1f} s (< 30 s)")


def test_criterion_10_cli_determinism(tmp_path):
    with criterion(10):
        fit_in = tmp_path / "fit_input"
        with contextlib.redirect_stdout(io.StringIO()):
            cli_main(["storage", "--config", str(PAPER_CFG), "--seed", "7", "--out", str(fit_in),
                      "--format", "csv"])
        runs = [["prep-fidelity"], ["storage"], ["parity"], ["gate-design"], ["detect-calib"]]
        results = {}
        for fmt in ("json", "csv"):
            for cmd in runs:
                blobs = []
                for rep in range(2):
                    out = tmp_path / f"{cmd[0]}_{fmt}_{rep}"
                    with contextlib.redirect_stdout(io.StringIO()):
                        code = cli_main(cmd + ["--config", str(PAPER_CFG), "--seed", "7",
                                               "--out", str(out), "--format", fmt])
                    assert code == 0, f"{cmd[0]} exited {code}"
                    blobs.append(next(out.iterdir()).read_bytes())
                results[f"{cmd[0]}.{fmt}"] = blobs[0] == blobs[1]
            blobs = []
            for rep in range(2):
                buf = io.StringIO()
                with contextlib.redirect_stdout(buf):
                    cli_main(["fit", "--in", str(fit_in / "storage.csv"), "--format", fmt])
                blobs.append(buf.getvalue())
            results[f"fit.{fmt}"] = blobs[0] == blobs[1]
        bad = [k for k, v in results.items() if not v]
        record(10, not bad, f"{len(results)} command/format pairs byte-identical across two runs"
               + (f"; differing: {', '.join(bad)}" if bad else ""))
