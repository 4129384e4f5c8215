"""One test per acceptance criterion; each records a PASS/FAIL line printed at session end."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from spectral_mim import cli, expectation as ex, finite_oracle as fo, model_core as mc, optimal_design as od
from spectral_mim import simulator as sm, theory as th
from spectral_mim.config import load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_criterion_01_product_threshold(tmp_path):
    cfg = load_config(CONFIGS / "prod.json")
    t0 = time.perf_counter()
    cli.cmd_design(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    import json

    rep = json.loads((tmp_path / "prod_design.json").read_text())
    dc = rep["delta_c"]
    ok = abs(dc - 1.68421) <= 0.01 and elapsed < 30
    record(1, ok, f"delta_c={dc:.6f} (1/delta_c={rep['inverse_delta_c']:.6f}) target 1.68421+-0.01, "
                  f"{elapsed:.1f}s")
    assert elapsed < 30
    assert abs(dc - 1.68421) <= 0.01


def test_criterion_02_closed_form_map(product_design):
    ys = np.array([0.5, 1.0, 2.0, 5.0])
    ys = np.concatenate([ys, -ys])
    err = np.max(np.abs(product_design.T_star(ys) - od.t_star_product(ys)))
    record(2, err < 1e-3, f"max |T*_pipeline - T*_closed| = {err:.2e} over y in +-{{0.5,1,2,5}}")
    assert err < 1e-3


def test_criterion_03_finite_oracle_suite():
    t0 = time.perf_counter()
    reps = fo.run_suite(instances=100, seed=0, n_max=60, d_max=20, p_max=3)
    elapsed = time.perf_counter() - t0
    fails = [r for r in reps if not r.passed]
    names = {r.preproc for r in reps}
    eig = max(max(r.eig_errors, default=0) for r in reps)
    vec = max(max(r.vec_errors, default=0) for r in reps)
    ok = not fails and elapsed < 60 and len(names) == 3
    record(3, ok, f"{100 - len(fails)}/100 passed, max eig err {eig:.1e}, max vec err {vec:.1e}, "
                  f"{sum(r.outlier_branches for r in reps)} outlier branches, {elapsed:.1f}s")
    assert not fails, [r.error for r in fails]
    assert elapsed < 60 and len(names) == 3


def test_criterion_04_marchenko_pastur(sim):
    model, sig, pre = mc.pure_noise(1), mc.make_signals(1), mc.constant(1.0)
    bulk = th.fit_bulk(ex.build_zlaw(model, sig, pre), 1.0)
    sol = th.solve_master(bulk)
    res = sim(model, sig, pre, 400, 1.0, 10, 1)
    lam = res.stat("eigenvalue")[:, 0, 0].mean()
    ok = abs(bulk.bulk_edge - 4) <= 1e-6 and sol.n_outliers == 0 and 3.7 <= lam <= 4.3
    record(4, ok, f"bulk_edge={bulk.bulk_edge:.9f}, outliers={sol.n_outliers}, simulated mean lambda1={lam:.4f}")
    assert abs(bulk.bulk_edge - 4) <= 1e-6
    assert sol.n_outliers == 0
    assert 3.7 <= lam <= 4.3


@pytest.mark.slow
def test_criterion_05_product_sweep(product, product_law):
    cfg = load_config(CONFIGS / "prod.json")
    base = sm.ExperimentConfig(n=cfg.d, d=cfg.d, model=cfg.model, signals=cfg.signals, preproc=cfg.preprocessings[0],
                               trials=cfg.trials, seed=cfg.seed)
    t0 = time.perf_counter()
    results = sm.sweep(base, cfg.deltas)
    elapsed = time.perf_counter() - t0
    lines, ok = [], elapsed < 600
    for res in results:
        delta = res.config.delta
        emp = res.stat("overlap_signal")[:, 0, 0].mean()
        pred = np.sqrt(th.predict_at(product_law, product[1], delta).overlap_signal[0, 0])
        if delta >= 3:
            good = abs(emp - pred) <= 0.05
        elif delta == 2:
            good = abs(emp - pred) <= 0.10
        else:
            good = emp <= 0.15
        ok &= bool(good)
        lines.append(f"d={delta:g}: emp {emp:.3f} th {pred:.3f} {'ok' if good else 'X'}")
    record(5, ok, "; ".join(lines) + f"; {elapsed:.0f}s")
    assert ok, lines


def test_criterion_06_mixed_pr_thresholds(mixed_pr):
    model, sig = mixed_pr
    mpr = th.recovery_threshold(model, sig, od.t_star_mixed_pr(0.6, 0.3, 10.0), 1, (1.0, 60.0))
    nonmixed = th.recovery_threshold(model, sig, mc.pr_nonmixed_optimal(-10.0), 1, (1.0, 60.0))
    plain = mpr < 7 and nonmixed > 19
    margin = mpr * 1.05 < 7 and nonmixed * 0.95 > 19
    record(6, margin, f"branch-2 thresholds: T_mpr {mpr:.4f} (x1.05 = {1.05 * mpr:.3f} vs 7), non-mixed "
                      f"{nonmixed:.4f} (x0.95 = {0.95 * nonmixed:.3f} vs 19); plain inequalities "
                      f"{'hold' if plain else 'fail'}")
    assert plain
    assert mpr * 1.05 < 7
    assert nonmixed * 0.95 > 19


def test_criterion_07_comparison_operator(product, product_design):
    res = od.troiani_threshold(*product)
    gap = abs(res.one_over_alpha_c - 1 / product_design.delta_c)
    ok = gap <= 1e-3 and res.rank_one_attained and np.linalg.matrix_rank(res.M_star, tol=1e-8) == 1
    record(7, ok, f"1/alpha_c={res.one_over_alpha_c:.8f}, 1/delta_c={1 / product_design.delta_c:.8f}, "
                  f"rank-1 fixed point: {res.rank_one_attained}")
    assert ok


def test_criterion_08_permutation_eigenvector(product_law):
    v = np.array([1.0, -1.0]) / np.sqrt(2)
    res = []
    for alpha in (2.0, 3.0, 5.0):
        R = th.r_infinity(product_law, alpha)
        res.append(np.linalg.norm(R @ v - (v @ R @ v) * v))
    ok = max(res) < 1e-8
    record(8, ok, "residuals " + ", ".join(f"{r:.1e}" for r in res))
    assert ok


def test_criterion_09_derivative_suite(product_law):
    rng = np.random.default_rng(2024)
    bulk = th.fit_bulk(product_law, 5.0)
    worst = {"zeta_prime": 0.0, "r_infinity_deriv": 0.0, "R_matrix": 0.0}
    for alpha in bulk.lambda_bar + rng.uniform(0.05, 6.0, 20):
        h = 1e-4 * alpha
        fd = (th.zeta(bulk, alpha + h) - th.zeta(bulk, alpha - h)) / (2 * h)
        worst["zeta_prime"] = max(worst["zeta_prime"], abs(th.zeta_prime(bulk, alpha) - fd) / abs(fd))
        fdR = (th.r_infinity(product_law, alpha + h) - th.r_infinity(product_law, alpha - h)) / (2 * h)
        dR = th.r_infinity_deriv(product_law, alpha)
        worst["r_infinity_deriv"] = max(worst["r_infinity_deriv"], np.max(np.abs(dR - fdR)) / np.max(np.abs(dR)))
    A = rng.standard_normal((120, 20))
    dec = fo.decompose(A, mc.product_optimal()(A[:, 0] * A[:, 1]), 2)
    for lam in dec.lambda1_P + rng.uniform(0.05, 5.0, 20):
        h = 1e-5 * lam
        fd = (fo.R_matrix(dec, lam + h)[0] - fo.R_matrix(dec, lam - h)[0]) / (2 * h)
        dR = fo.R_matrix(dec, lam)[1]
        worst["R_matrix"] = max(worst["R_matrix"], np.max(np.abs(fd - dR)) / np.max(np.abs(dR)))
    ok = max(worst.values()) < 1e-5
    record(9, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


@pytest.mark.slow
def test_criterion_10_multiplicity_overlaps(product, sim):
    model, sig = product
    lines, ok = [], True
    for pre, block in ((mc.product_optimal(), [0]), (mc.product_symmetric(), [0, 1])):
        pred = th.predict_at(ex.build_zlaw(model, sig, pre), sig, 5.0)
        assert [block] == pred.multiplicity_blocks[:1]
        res = sim(model, sig, pre, 1500, 5.0, 10, 31)
        emp = res.stat("overlap_basis_sq")[:, block, :].sum(axis=1).mean(axis=0)
        th_val = pred.overlap_basis[block[0]]
        err = np.max(np.abs(emp - th_val))
        ok &= bool(err <= 0.05)
        lines.append(f"{pre.name} block {[i + 1 for i in block]}: theory {th_val[0]:.4f} "
                     f"sim {emp[0]:.4f}/{emp[1]:.4f} err {err:.3f}")
    record(10, ok, "; ".join(lines))
    assert ok
