import numpy as np
import pytest

from dictident.config import config_from_mapping
from dictident.dictionary import orthonormal
from dictident.experiments import (
    SCHEMAS,
    adversarial_outliers,
    alternating_minimization,
    dictionary_step,
    draw_batch,
    nonconverged_fraction,
    run_delta_F,
    run_local_min_search,
    run_outlier_sweep,
    run_sample_complexity_sweep,
    scan_sphere,
)
from dictident.lasso import lasso_batch, lasso_objective
from dictident.model import CoefficientModel, SignedUniform, generate_batch
from dictident.oblique import sample_sphere


def _conf(**over):
    cfg = {
        "dictionary.kind": "orthonormal", "dictionary.m": "16",
        "model.k": "1", "model.alpha_min": "1", "model.alpha_max": "2",
        "lambda_bar": "0.05", "radii": "0.05, 0.1", "n": "400", "n_dirs": "4",
        "repeats": "2", "seed": "7",
    }
    cfg.update({k: str(v) for k, v in over.items()})
    return config_from_mapping(cfg)


def _check_rows(rows, kind, conf):
    for row in rows:
        assert list(row) == SCHEMAS[kind] or set(row) == set(SCHEMAS[kind])
        assert row["seed"] == conf.seed and row["config_hash"] == conf.config_hash and row["version"]


def test_zero_radius_gives_zero_difference():
    """[TRIVIAL] the sphere of radius 0 is the reference itself."""
    conf = _conf(radii="0")
    rows = run_delta_F(conf)
    assert all(r["min_dF"] == 0.0 and not r["positive"] for r in rows)


def test_delta_F_rows_and_positivity():
    conf = _conf()
    rows = run_delta_F(conf)
    assert len(rows) == conf.repeats * len(conf.radii)
    _check_rows(rows, "deltaf", conf)
    assert all(r["converged"] and r["positive"] for r in rows)
    assert all(r["certified_fraction"] == 1.0 for r in rows)


def test_thread_count_does_not_change_rows():
    """[TRIVIAL] substreams are keyed by cell, not by worker."""
    conf = _conf()
    assert run_delta_F(conf, threads=1) == run_delta_F(conf, threads=3)
    assert run_local_min_search(_conf(repeats=3), threads=1) == run_local_min_search(_conf(repeats=3), threads=2)


def test_seed_changes_results():
    a = run_delta_F(_conf(seed=1))
    b = run_delta_F(_conf(seed=2))
    assert [r["min_dF"] for r in a] != [r["min_dF"] for r in b]


def test_scan_sphere_paired_difference(rng):
    """[DERIVED] mean objective difference from directly solved codes."""
    D0 = orthonormal(8)
    model = CoefficientModel(8, 1, SignedUniform(1, 1))
    batch = generate_batch(D0, model, 50, rng)
    D = sample_sphere(D0, 0.1, rng)
    scan = scan_sphere(batch, D0, [D], 0.05)
    F = lambda Dx: np.mean(lasso_objective(batch.signals, Dx, lasso_batch(batch.signals, Dx, 0.05).alpha, 0.05))
    assert scan.dF[0] == pytest.approx(F(D) - F(D0), abs=1e-9)


def test_dictionary_step_monotone(rng):
    """[DERIVED] the per-atom update never increases the objective and keeps unit columns."""
    D0 = orthonormal(12)
    model = CoefficientModel(12, 2, SignedUniform(1, 2))
    batch = generate_batch(D0, model, 200, rng)
    D = sample_sphere(D0, 0.3, rng)
    A = batch.coefficients + 0.01 * rng.standard_normal(batch.coefficients.shape) * (batch.coefficients != 0)
    D1 = dictionary_step(batch.signals, D, A)
    assert np.allclose(np.linalg.norm(D1, axis=0), 1.0)
    f = lambda Dx: np.sum((batch.signals - Dx @ A) ** 2)
    assert f(D1) <= f(D) + 1e-12


def test_dictionary_step_exact_codes_recover_reference(rng):
    """[DERIVED] with the true codes and no noise one sweep returns D0 up to rounding."""
    D0 = orthonormal(6)
    model = CoefficientModel(6, 1, SignedUniform(1, 1))
    batch = generate_batch(D0, model, 300, rng)
    D = sample_sphere(D0, 0.2, rng)
    assert np.allclose(dictionary_step(batch.signals, D, batch.coefficients), D0, atol=1e-12)


def test_alternating_minimization_k1_returns_reference():
    conf = _conf(n=500)
    batch = draw_batch(conf, 0)
    D_init = sample_sphere(conf.D0, 0.05, np.random.default_rng(0))
    res = alternating_minimization(batch, D_init, conf.lam, D_ref=conf.D0)
    assert res.converged and not res.diverged
    assert res.final_radius < 1e-8 and res.sign_match_rate == 1.0
    assert all(b <= a + 1e-12 for a, b in zip(res.F_trace, res.F_trace[1:]))


def test_large_penalty_destroys_sign_recovery():
    """[TRIVIAL] lam far above every coefficient zeroes all codes."""
    cfg = dict(_conf().raw)
    cfg.pop("lambda_bar")
    cfg["lambda"] = "5"
    conf = config_from_mapping(cfg)
    batch = draw_batch(conf, 0)
    res = alternating_minimization(batch, conf.D0, conf.lam, max_iter=3, D_ref=conf.D0)
    assert res.sign_match_rate == 0.0


def test_local_min_rows():
    conf = _conf(repeats=2, **{"localmin.r_init": 0.05})
    rows = run_local_min_search(conf)
    _check_rows(rows, "localmin", conf)
    assert all(r["converged"] and r["stopped"] and r["final_radius"] < 0.05 for r in rows)
    assert nonconverged_fraction(rows) == 0.0


def test_adversarial_outliers_energy_and_shape():
    D0 = orthonormal(16)
    D = sample_sphere(D0, 0.1, np.random.default_rng(3))
    X = adversarial_outliers(D0, D, 0.1, None, 2.5)
    assert X.shape[0] == 16 and X.shape[1] >= 1
    assert np.sum(X**2) == pytest.approx(2.5)
    X5 = adversarial_outliers(D0, D, 0.1, 5, 2.5)
    assert X5.shape[1] == 5 and np.sum(X5**2) == pytest.approx(2.5)
    # reference correlations off the picked atom stay below the penalty
    j = int(np.argmax(np.abs(D0.T @ X5[:, 0])))
    corr = np.abs(D0.T @ X5[:, 0])
    corr[j] = 0
    assert corr.max() < 0.1


@pytest.mark.parametrize("style", ["sphere", "atom", "adversarial"])
def test_outlier_sweep_rows(style):
    conf = _conf(**{"outliers.count": "auto", "outliers.style": style, "outliers.ratios": "0, 0.5", "repeats": 1})
    rows = run_outlier_sweep(conf)
    _check_rows(rows, "outliers", conf)
    zero = [r for r in rows if r["ratio"] == 0]
    assert all(r["n_out"] == 0 and r["fro2_per_n_in"] == 0 for r in zero)
    half = [r for r in rows if r["ratio"] == 0.5]
    for r in half:
        assert r["n_out"] > 0
        assert r["fro2_per_n_in"] == pytest.approx(0.5 * r["naive_threshold_per_n_in"], rel=1e-9)
        assert r["within_prediction"]


def test_sample_complexity_rows():
    conf = _conf(**{"samplen.n_grid": "100, 400", "repeats": 2, "radii": "0.1"})
    rows = run_sample_complexity_sweep(conf)
    _check_rows(rows, "samplen", conf)
    assert [r["n"] for r in rows] == [100, 400]
    assert all(0 <= r["failure_rate"] <= 1 and r["converged_fraction"] == 1.0 for r in rows)
    assert rows[0]["eta"] > rows[1]["eta"]


def test_nonconverged_fraction():
    assert nonconverged_fraction([]) == 0.0
    assert nonconverged_fraction([{"converged": True}, {"converged": False}]) == 0.5
    assert nonconverged_fraction([{"converged_fraction": 1.0}, {"converged_fraction": 0.5}]) == pytest.approx(0.25)


@pytest.mark.parametrize("style", ["sphere", "adversarial"])
def test_outlier_sweep_matches_direct_scan(style):
    """[DERIVED] split inlier/outlier evaluation equals scanning the combined batch."""
    from dictident.experiments import _OUTLIERS, _with_outliers, sphere_directions
    from dictident.model import substream
    from dictident.oblique import decompose
    from dictident.theorems import asymptotic_report, outlier_thresholds

    conf = _conf(**{"outliers.count": "auto", "outliers.style": style, "outliers.ratios": "3", "repeats": 1, "radii": "0.1"})
    row = run_outlier_sweep(conf)[0]
    th = outlier_thresholds(asymptotic_report(conf.D0, conf.model, conf.lam), 0.1, conf.x, conf.n)
    dirs = sphere_directions(conf, 0, 0, 0.1)
    target = max(dirs, key=lambda D: float(np.max(decompose(conf.D0, D).theta)))
    full = _with_outliers(conf, draw_batch(conf, 0), 3 * th.naive_limit, substream(conf.seed, _OUTLIERS, 0, 0, 0), target)
    assert full.n_out == row["n_out"] > 0
    assert scan_sphere(full, conf.D0, dirs, conf.lam).min == pytest.approx(row["min_dF"], rel=1e-9, abs=1e-14)
