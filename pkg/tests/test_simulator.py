import numpy as np
import pytest

from spectral_mim import expectation as ex, model_core as mc, simulator as sm, theory as th
from spectral_mim.errors import DegenerateSignals, InvalidDimension, SolverFailure
from spectral_mim.lanczos import lanczos_top


def cfg(model, signals, pre, d, delta, **kw):
    return sm.ExperimentConfig(n=int(round(delta * d)), d=d, model=model, signals=signals, preproc=pre, **kw)


def test_marchenko_pastur_edge(sim):
    res = sim(mc.pure_noise(1), mc.make_signals(1), mc.constant(1.0), 400, 1.0, 10, 3)
    lam = res.stat("eigenvalue")[:, 0, 0]
    assert np.all((lam > 3.6) & (lam < 4.4))


def test_dense_and_lanczos_agree(product):
    base = cfg(*product, mc.product_optimal(), 300, 3.0, trials=1, seed=5)
    dense = sm.run_trial(base, sm.trial_rng(5, 0, 0))
    from dataclasses import replace

    lz = sm.run_trial(replace(base, eigensolver="lanczos", lanczos_tol=1e-13), sm.trial_rng(5, 0, 0))
    assert lz.solver == "lanczos"
    assert np.allclose(dense.eigenvalues, lz.eigenvalues, atol=1e-9)
    assert np.allclose(dense.overlap_basis, lz.overlap_basis, atol=1e-6)


def test_lanczos_diagonal():
    diag = np.linspace(0, 1, 200)
    diag[[10, 50]] = [5.0, 4.0]
    vals, vecs = lanczos_top(lambda x: diag * x, 200, 2, np.random.default_rng(0))
    assert np.allclose(vals, [5.0, 4.0], atol=1e-10)
    assert abs(abs(vecs[10, 0]) - 1) < 1e-8


def test_lanczos_reports_failure():
    rng = np.random.default_rng(1)
    diag = 1 + 1e-9 * rng.random(500)
    with pytest.raises(SolverFailure):
        lanczos_top(lambda x: diag * x, 500, 3, rng, max_iter=6, tol=1e-16)


def test_determinism(product):
    c = cfg(*product, mc.product_optimal(), 120, 2.0, trials=3, seed=9)
    a, b = sm.run_experiment(c), sm.run_experiment(c)
    assert a.rows == b.rows
    from dataclasses import replace

    t = sm.run_experiment(replace(c, threads=3))
    assert t.rows == a.rows


def test_trial_streams_differ(product):
    res = sm.run_experiment(cfg(*product, mc.product_optimal(), 100, 2.0, trials=2, seed=1))
    assert not np.allclose(res.trials[0].eigenvalues, res.trials[1].eigenvalues)


def test_sweep(product):
    out = sm.sweep(cfg(*product, mc.product_optimal(), 200, 1.0, trials=2, seed=2), [1.0, 3.0, 8.0])
    assert [r.config.grid_index for r in out] == [0, 1, 2]
    means = [r.stat("overlap_basis_sq")[:, 0].sum(axis=1).mean() for r in out]
    assert means[0] < means[1] < means[2]
    with pytest.raises(ValueError):
        sm.sweep(out[0].config, [])


def test_config_validation(product):
    with pytest.raises(InvalidDimension):
        cfg(*product, mc.product_optimal(), 1, 2.0)
    with pytest.raises(ValueError):
        cfg(*product, mc.product_optimal(), 20, 2.0, eigensolver="qr")


def test_weak_recovery_examples():
    W = np.eye(10)[:, :2]
    assert sm.subspace_score(W, W) == pytest.approx(1.0)
    assert sm.subspace_score(np.eye(10)[:, 2:4], W) == pytest.approx(0.0, abs=1e-12)
    V = np.zeros((10, 1))
    V[0, 0] = V[2, 0] = 1 / np.sqrt(2)
    assert sm.subspace_score(V, W) == pytest.approx(1 / np.sqrt(2))
    with pytest.raises(DegenerateSignals):
        sm.subspace_score(W, np.ones((10, 2)))


def test_subspace_score_is_top_singular_value(rng):
    Q = np.linalg.qr(rng.standard_normal((50, 3)))[0]
    V = np.linalg.qr(rng.standard_normal((50, 3)) + 2 * Q)[0]
    assert sm.subspace_score(V, Q) == pytest.approx(np.linalg.svd(V.T @ Q, compute_uv=False)[0], rel=1e-10)
    # invariant under a change of basis of the signal span
    B = rng.standard_normal((3, 3))
    assert sm.subspace_score(V, Q @ B) == pytest.approx(sm.subspace_score(V, Q), rel=1e-8)


def test_result_invariants(mixed_pr):
    model, sig = mixed_pr
    res = sm.run_experiment(cfg(model, sig, mc.trimming(7), 150, 4.0, trials=2, seed=4))
    for r in res.trials:
        assert np.allclose(r.eigenvectors.T @ r.eigenvectors, np.eye(2), atol=1e-10)
        assert np.allclose(r.W_star.T @ r.W_star, sig.Sigma, atol=1e-12)
        assert np.all(np.diff(r.eigenvalues) <= 0)
        assert np.all(r.overlap_basis <= 1 + 1e-12)
        assert 0 <= sm.weak_recovery_stat(r, sig) <= 1 + 1e-12


def test_random_frame_invariance(product):
    fixed = sm.run_experiment(cfg(*product, mc.product_optimal(), 80, 3.0, trials=50, seed=6))
    rot = sm.run_experiment(cfg(*product, mc.product_optimal(), 80, 3.0, trials=50, seed=7, random_frame=True))
    a = fixed.stat("subspace_score")[:, 0, 0]
    b = rot.stat("subspace_score")[:, 0, 0]
    se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    assert abs(a.mean() - b.mean()) < 3 * se


def test_below_threshold_no_alignment(product):
    res = sm.run_experiment(cfg(*product, mc.product_optimal(), 800, 0.4, trials=2, seed=8))
    assert res.stat("subspace_score").mean() < 0.3


def test_eigenvalue_monotone_in_added_sample(rng):
    A = rng.standard_normal((100, 40))
    z = np.abs(rng.standard_normal(100))
    top, _ = sm._top_dense(A, z, 2)
    A2 = np.vstack([A, rng.standard_normal((1, 40))])
    top2, _ = sm._top_dense(A2, np.append(z, 1.0), 2)
    # the normalization changes from 1/n to 1/(n+1)
    assert np.all(top2 * 101 >= top * 100 - 1e-10)


@pytest.mark.slow
def test_product_delta5_matches_theory(product, product_law, sim):
    pred = th.predict_at(product_law, product[1], 5.0)
    res = sim(*product, mc.product_optimal(), 1500, 5.0, 10, 21)
    lam = res.stat("eigenvalue")[:, 0, 0]
    ov = res.stat("overlap_basis_sq")[:, 0, 0]
    assert abs(lam.mean() - pred.eigenvalues[0]) <= max(lam.std(ddof=1), 0.01)
    assert abs(ov.mean() - pred.overlap_basis[0, 0]) <= max(ov.std(ddof=1), 0.02)


@pytest.mark.slow
def test_mixed_pr_sweep_ordering(mixed_pr):
    model, sig = mixed_pr
    from spectral_mim.optimal_design import t_star_mixed_pr

    base = cfg(model, sig, t_star_mixed_pr(0.6, 0.3, 10.0), 500, 2.0, trials=3, seed=10)
    out = sm.sweep(base, [2.0, 6.0, 15.0])
    scores = [r.stat("subspace_score").mean() for r in out]
    assert scores[0] < scores[1] < scores[2]
