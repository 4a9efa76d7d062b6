"""End-to-end acceptance checks, one test (or pair of tests) per criterion.

Each test records a one-line verdict through the ``acceptance`` fixture; the
lines are printed at the end of the pytest run.
"""

import itertools
import math
import time

import numpy as np
import pytest

from dictident.config import config_from_mapping
from dictident.dictionary import (
    coherence_transfer_bound,
    cumulative_coherence,
    onb_pair,
    orthonormal,
    rip_constants,
    spherical,
)
from dictident.experiments import run_delta_F, run_local_min_search, run_outlier_sweep
from dictident.lasso import lasso_batch, lasso_objective, recovery_radius_check, restricted_batch
from dictident.model import CoefficientModel, SignedUniform, TruncatedGaussian, generate_batch, substream
from dictident.oblique import decompose, reconstruct, sample_sphere
from dictident.phi import (
    combine_traces,
    delta_phi_samples,
    delta_phi_terms,
    expectation_traces,
    expected_delta_phi,
    uniform_lower_bound,
)


def _true_signs(batch):
    S = batch.support_matrix()
    return S, np.sign(batch.coefficients[S.T, np.arange(batch.n)].T)


# 1 ---------------------------------------------------------------------------

def test_closed_form_matches_solver(acceptance):
    """[DERIVED] certified closed form vs coordinate descent on 10^4 instances (m=16, p=32, k=3)."""
    target = 10_000
    model = CoefficientModel(32, 3, SignedUniform(0.5, 2.0))
    t0 = time.perf_counter()
    count = sign_errors = 0
    worst = 0.0
    i = 0
    while count < target:
        rng = substream(101, i)
        i += 1
        D = spherical(16, 32, rng)
        lam = rng.uniform(0.02, 0.3)
        batch = generate_batch(D, model, 2000, rng)
        S, sg = _true_signs(batch)
        cert = restricted_batch(batch.signals, D, S, sg, lam)
        keep = np.flatnonzero(cert.passed)[: target - count]
        if not keep.size:
            continue
        count += keep.size
        X = batch.signals[:, keep]
        sol = lasso_batch(X, D, lam)
        f = lasso_objective(X, D, sol.alpha, lam)
        worst = max(worst, float(np.max(np.abs(f - cert.phi[keep]) / (1 + np.abs(f)))))
        sign_errors += int(np.sum(np.any(np.sign(sol.alpha) != np.sign(batch.coefficients[:, keep]), axis=0)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and sign_errors == 0 and elapsed < 60
    acceptance(1, "closed form equals solver on certified instances", ok,
               f"{count} instances from {i} dictionaries, max rel err {worst:.1e}, sign errors {sign_errors}, {elapsed:.1f}s")
    assert worst <= 1e-8
    assert sign_errors == 0
    assert elapsed < 60


# 2 ---------------------------------------------------------------------------

def test_exact_recovery_almost_sure(acceptance):
    """[PAPER] zero sign-recovery failures in 10^4 trials inside the guaranteed regime."""
    D0 = onb_pair(128)
    model = CoefficientModel(256, 2, SignedUniform(1, 2), TruncatedGaussian(0.002, 0.02))
    lam = model.alpha_min / 4
    r = 0.01
    check = recovery_radius_check(D0, model, lam, r)
    assert cumulative_coherence(D0, 2) <= 0.25
    assert check.admissible, check.violations
    failures = trials = 0
    for i in range(100):
        rng = substream(202, i)
        D = sample_sphere(D0, r, rng)
        batch = generate_batch(D0, model, 100, rng)
        S, sg = _true_signs(batch)
        cert = restricted_batch(batch.signals, D, S, sg, lam)
        ok = cert.passed.copy()
        rest = np.flatnonzero(~ok)
        if rest.size:
            sol = lasso_batch(batch.signals[:, rest], D, lam)
            ok[rest] = np.all(np.sign(sol.alpha) == np.sign(batch.coefficients[:, rest]), axis=0)
        failures += int(np.sum(~ok))
        trials += batch.n
    acceptance(2, "almost sure exact recovery", failures == 0,
               f"{trials - failures}/{trials} recovered (mu_2={check.mu_k:.4f}, r={r} < C_max*lam_bar={check.C_max * check.lam_bar:.4f})")
    assert trials == 10_000
    assert failures == 0


# 3 ---------------------------------------------------------------------------

def test_expectation_identity(acceptance):
    """[DERIVED] exact enumeration vs Monte Carlo over 10^5 signals on 10 pairs (p=8, k=2)."""
    model = CoefficientModel(8, 2, SignedUniform(0.5, 1.5), TruncatedGaussian(0.02, 0.1))
    lam = 0.1
    worst = 0.0
    for i in range(10):
        rng = substream(303, i)
        D0 = spherical(8, 8, rng)
        D = sample_sphere(D0, rng.uniform(0.05, 0.5), rng)
        exact = expected_delta_phi(D, D0, model, lam, mode="exact")
        s = delta_phi_samples(D, D0, model, lam, 100_000, rng)
        z = abs(s.mean() - exact) / (s.std(ddof=1) / math.sqrt(s.size))
        worst = max(worst, z)
    acceptance(3, "expected difference identity", worst <= 4, f"max |z| = {worst:.2f} over 10 pairs (limit 4)")
    assert worst <= 4


# 4 ---------------------------------------------------------------------------

def _phi_direct(x, D, J, s, lam):
    DJ = D[:, J]
    a = np.linalg.solve(DJ.T @ DJ, DJ.T @ x - lam * s)
    return 0.5 * np.sum((x - DJ @ a) ** 2) + lam * np.sum(s * a)


def test_six_term_decomposition(acceptance):
    """[DERIVED] the six pieces sum to the direct difference on 10^4 instances."""
    rng = substream(404)
    worst = 0.0
    for _ in range(10_000):
        m = int(rng.integers(4, 12))
        p = int(rng.integers(m, 2 * m))
        k = int(rng.integers(1, m // 2 + 1))
        D0 = spherical(m, p, rng)
        D = sample_sphere(D0, rng.uniform(0.0, 0.5), rng)
        J = np.sort(rng.choice(p, k, replace=False))
        alpha = np.zeros(p)
        alpha[J] = rng.choice([-1.0, 1.0], k) * rng.uniform(0.2, 2.0, k)
        e = rng.uniform(0, 0.1) * rng.standard_normal(m)
        lam = rng.uniform(0, 0.5)
        x = D0 @ alpha + e
        s = np.sign(alpha[J])
        direct = _phi_direct(x, D, J, s, lam) - _phi_direct(x, D0, J, s, lam)
        total = delta_phi_terms(alpha, e, D, D0, lam).total
        worst = max(worst, abs(total - direct))
    acceptance(4, "six-term decomposition", worst <= 1e-9, f"max abs deviation {worst:.1e} on 10^4 instances")
    assert worst <= 1e-9


# 5 ---------------------------------------------------------------------------

_five = {}


@pytest.mark.parametrize("case", ["dirac_cosine_k1", "orthonormal_k2"])
def test_bound_domination(acceptance, case):
    """[PAPER] trace bounds and the uniform lower bound hold on 200 samples at 5 radii."""
    if case == "dirac_cosine_k1":
        D0, k, lam_bar = onb_pair(64), 1, 0.01
    else:
        D0, k, lam_bar = orthonormal(128), 2, 0.1
    p = D0.shape[1]
    model = CoefficientModel(p, k, SignedUniform(1, 2))
    lam = model.lam_from_bar(lam_bar)
    top = uniform_lower_bound(D0, model, lam_bar, 0.15)
    assert top.valid, top.violations
    radii = np.linspace(top.r_min, 0.15, 6)[1:]
    rng = substream(505, int(case == "orthonormal_k2"))
    violations = 0
    samples = 0
    for r in radii:
        ub = uniform_lower_bound(D0, model, lam_bar, r)
        for _ in range(200):
            D = sample_sphere(D0, r, rng)
            tr = expectation_traces(D, D0, k, mode="exact", bounds=True)
            e = combine_traces(tr, model, lam)
            violations += int(tr.lead < tr.lead_bound)
            violations += int(abs(tr.bias_sa) > tr.bias_sa_bound)
            violations += int(abs(tr.bias_ss) > tr.bias_ss_bound)
            violations += int(e < ub.bound)
            samples += 1
    prev = _five.setdefault("detail", [])
    prev.append(f"{case}: {violations} violations in {samples} samples (r_min={top.r_min:.3f})")
    _five[case] = violations == 0
    acceptance(5, "bound domination", all(_five.get(c, True) for c in ("dirac_cosine_k1", "orthonormal_k2")), "; ".join(prev))
    assert violations == 0


# 6 ---------------------------------------------------------------------------

def test_sphere_geometry(acceptance):
    """[PAPER] angle/distance sandwich, exact reconstruction and sampler radius accuracy."""
    rng = substream(606)
    sandwich = 0
    recon = 0.0
    for i in range(10_000):
        m = int(rng.integers(2, 10))
        p = int(rng.integers(1, 16))
        D1 = spherical(m, p, rng)
        D2 = spherical(m, p, rng) if i % 2 else sample_sphere(D1, rng.uniform(0, 2 * math.sqrt(p)), rng)
        dec = decompose(D1, D2)
        th = float(np.linalg.norm(dec.theta))
        dist = float(np.linalg.norm(D2 - D1))
        sandwich += int(not (2 / math.pi * th <= dist + 1e-12 and dist <= th + 1e-12))
        recon = max(recon, float(np.max(np.abs(reconstruct(D1, dec) - D2))))
    radius = 0.0
    for _ in range(1000):
        m = int(rng.integers(2, 20))
        p = int(rng.integers(1, 40))
        D0 = spherical(m, p, rng)
        r = rng.uniform(0, 2 * math.sqrt(p))
        radius = max(radius, abs(float(np.linalg.norm(sample_sphere(D0, r, rng) - D0)) - r))
    ok = sandwich == 0 and recon <= 1e-12 and radius <= 1e-10
    acceptance(6, "sphere geometry", ok,
               f"sandwich violations {sandwich}, max reconstruction err {recon:.1e}, max radius err {radius:.1e}")
    assert sandwich == 0
    assert recon <= 1e-12
    assert radius <= 1e-10


# 7 ---------------------------------------------------------------------------

def test_coherence_transfer(acceptance):
    """[PAPER] measured cumulative coherence stays below the transfer bound."""
    D0 = onb_pair(32)
    k = 2
    mu_k, mu_km1 = cumulative_coherence(D0, k), cumulative_coherence(D0, k - 1)
    rng = substream(707)
    violations = 0
    slack = math.inf
    for r in (0.01, 0.05, 0.1):
        bound = coherence_transfer_bound(mu_k, mu_km1, k, r)
        for _ in range(1000):
            got = cumulative_coherence(sample_sphere(D0, r, rng), k)
            violations += int(got > bound)
            slack = min(slack, bound - got)
    acceptance(7, "coherence transfer", violations == 0, f"{violations} violations in 3000 perturbations, min slack {slack:.3g}")
    assert violations == 0


# 8 ---------------------------------------------------------------------------

def test_rip_oracle(acceptance):
    """[DERIVED] exact RIP constants vs singular values of every submatrix, and delta_k <= mu_{k-1}."""
    rng = substream(808)
    mismatch = 0.0
    over = 0
    for _ in range(50):
        p = int(rng.integers(4, 13))
        m = int(rng.integers(3, p + 1))
        k = int(rng.integers(1, min(4, m) + 1))
        D = spherical(m, p, rng)
        lo, hi, exact = rip_constants(D, k, "exact")
        assert exact
        smin, smax = np.inf, -np.inf
        for J in itertools.combinations(range(p), k):
            sv = np.linalg.svd(D[:, list(J)], compute_uv=False)
            smin, smax = min(smin, sv[-1] ** 2), max(smax, sv[0] ** 2)
        mismatch = max(mismatch, abs(lo - max(0.0, 1 - smin)), abs(hi - max(0.0, smax - 1)))
        mu = cumulative_coherence(D, k - 1)
        over += int(lo > mu + 1e-12 or hi > mu + 1e-12)
    ok = mismatch <= 1e-12 and over == 0
    acceptance(8, "restricted isometry oracle", ok, f"max mismatch {mismatch:.1e}, coherence-bound violations {over} (50 dictionaries)")
    assert mismatch <= 1e-12
    assert over == 0


# 9 and 10 --------------------------------------------------------------------

DESK = {
    "dictionary.kind": "orthonormal", "dictionary.m": "32",
    "model.k": "2", "model.alpha_min": "1", "model.alpha_max": "2",
    "lambda_bar": "0.05", "radii": "0.02, 0.05, 0.1", "n": str(50 * 32 * 32), "n_dirs": "100",
}
SEEDS = range(10)


def test_sphere_positivity_desk_scale(acceptance):
    """[PAPER] min over 100 directions of the objective difference is positive for 10 seeds."""
    t0 = time.perf_counter()
    rows = []
    for seed in SEEDS:
        rows += run_delta_F(config_from_mapping(DESK, seed))
    elapsed = time.perf_counter() - t0
    bad = [r for r in rows if not r["positive"]]
    worst = min(r["min_dF"] for r in rows)
    ok = not bad and elapsed < 600 and len(rows) == 30
    acceptance(9, "sphere positivity", ok, f"{30 - len(bad)}/30 cells positive, smallest min {worst:.3g}, {elapsed:.0f}s")
    assert len(rows) == 30
    assert not bad
    assert elapsed < 600


@pytest.fixture(scope="module")
def outlier_rows():
    cfg = dict(DESK, **{"outliers.count": "auto", "outliers.style": "adversarial",
                        "outliers.ratios": "0.5, 20", "outliers.threshold": "limit"})
    rows = []
    for seed in SEEDS:
        rows += run_outlier_sweep(config_from_mapping(cfg, seed))
    return rows


_ten = {}


def test_outliers_below_threshold_keep_positivity(acceptance, outlier_rows):
    """[PAPER] outlier energy at half the naive threshold keeps every cell positive."""
    half = [r for r in outlier_rows if r["ratio"] == 0.5]
    bad = [r for r in half if not r["positive"]]
    _ten["half"] = (not bad, f"50%: {len(half) - len(bad)}/{len(half)} cells positive")
    acceptance(10, "outlier robustness", not bad, _ten["half"][1])
    assert len(half) == 30 and all(r["n_out"] > 0 for r in half)
    assert not bad


@pytest.mark.xfail(strict=True, reason="adversarial outliers at 20x the budget do not flip positivity at radii <= 0.1; see notes")
def test_outliers_far_above_threshold_break_positivity(acceptance, outlier_rows):
    """[PAPER] at 20 times the naive threshold some cell should fail."""
    far = [r for r in outlier_rows if r["ratio"] == 20]
    failing = [r for r in far if not r["positive"]]
    smallest = {r: min(x["min_dF"] for x in far if x["r"] == r) for r in (0.02, 0.05, 0.1)}
    half_ok, half_text = _ten.get("half", (False, "50%: not run"))
    detail = f"{half_text}; 20x adversarial: {len(failing)}/{len(far)} failing cells, smallest min by radius " + \
        ", ".join(f"{r}: {v:.2g}" for r, v in smallest.items())
    acceptance(10, "outlier robustness", half_ok and bool(failing), detail)
    assert len(far) == 30
    assert failing


# 11 --------------------------------------------------------------------------

def test_local_minimum_search(acceptance):
    """[PAPER] alternating minimization from r_init = 0.05 ends closer with perfect sign match."""
    cfg = {
        "dictionary.kind": "orthonormal", "dictionary.m": "64",
        "model.k": "1", "model.alpha_min": "1", "lambda": "0.2", "n": "4096",
        "localmin.r_init": "0.05",
    }
    conf = config_from_mapping(cfg, 0)
    rep = recovery_radius_check(conf.D0, conf.model, conf.lam, 0.05)
    assert rep.admissible, rep.violations
    rows = []
    for seed in range(20):
        rows += run_local_min_search(config_from_mapping(cfg, seed))
    good = [r for r in rows if r["converged"] and r["stopped"] and r["final_radius"] < 0.05 and r["sign_match_rate"] == 1.0]
    worst = max(r["final_radius"] for r in rows)
    acceptance(11, "local minimum search", len(good) == 20, f"{len(good)}/20 seeds converged inside r_init, max final radius {worst:.1e}")
    assert len(good) == 20
