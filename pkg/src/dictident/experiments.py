"""Monte Carlo campaigns around a reference dictionary.

Every driver takes an :class:`~dictident.config.ExperimentConfig` and returns
a list of flat dict rows. All randomness is drawn from Philox substreams keyed
by ``(seed, purpose, ...)`` so rows do not depend on the number of threads.
Each row carries ``seed``, ``config_hash`` and ``version``.

Row schemas (in column order) are listed in ``SCHEMAS``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import ConvergenceError, InfeasibleRadiusError
from .lasso import evaluate, lasso_batch, lasso_objective
from .model import SignalBatch, generate_batch, inject_outliers, substream
from .oblique import decompose, sample_sphere
from .phi import deviation_constants, uniform_lower_bound
from .theorems import asymptotic_report, finite_sample_n, outlier_thresholds

# substream purposes
_BATCH, _DIRS, _OUTLIERS, _INIT = 0, 1, 2, 3

COMMON = ["seed", "config_hash", "version"]
SCHEMAS = {
    "deltaf": ["rep", "r", "n", "n_dirs", "min_dF", "mean_dF", "bound", "eta", "bound_minus_2eta",
               "positive", "certified_fraction", "converged", "error"] + COMMON,
    "outliers": ["rep", "r", "style", "ratio", "n_out", "fro2_per_n_in", "norm12_per_n_in",
                 "naive_threshold_per_n_in", "refined_threshold_per_n_in", "min_dF", "positive",
                 "within_prediction", "converged", "error"] + COMMON,
    "samplen": ["n", "r", "repeats", "failures", "failure_rate", "stderr", "eta", "n_required",
                "converged_fraction"] + COMMON,
    "localmin": ["rep", "r_init", "final_radius", "iterations", "stopped", "converged", "F_initial", "F_final",
                 "sign_match_rate", "diverged", "error"] + COMMON,
}


def _stamp(conf: ExperimentConfig, row: dict) -> dict:
    row.update(seed=conf.seed, config_hash=conf.config_hash, version=__version__)
    return row


def _map(fn, cells, threads):
    if threads <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cells))


def draw_batch(conf: ExperimentConfig, rep: int, n: Optional[int] = None) -> SignalBatch:
    """Inlier batch of replicate ``rep`` (``n`` defaults to ``conf.n``)."""
    n = conf.n if n is None else n
    return generate_batch(conf.D0, conf.model, n, substream(conf.seed, _BATCH, rep, n))


def sphere_directions(conf: ExperimentConfig, rep: int, ri: int, r: float) -> list:
    rng = substream(conf.seed, _DIRS, rep, ri)
    return [sample_sphere(conf.D0, r, rng) for _ in range(conf.n_dirs)]


# ---------------------------------------------------------------------------
# objective differences on a sphere

@dataclass
class SphereScan:
    dF: np.ndarray  # per direction F_X(D) - F_X(D0)
    certified_fraction: float
    converged: bool = True
    error: str = ""

    @property
    def min(self) -> float:
        return float(np.min(self.dF)) if self.dF.size else math.nan


def scan_sphere(batch: SignalBatch, D0, dictionaries, lam: float, max_sweeps: int = 10**5, F0=None) -> SphereScan:
    """``F_X(D) - F_X(D0)`` for each D on a common batch (paired differences)."""
    try:
        if F0 is None:
            F0 = float(np.mean(_values(batch, D0, lam, max_sweeps)[0]))
        dF, cert = [], []
        for D in dictionaries:
            v, c = _values(batch, D, lam, max_sweeps)
            dF.append(float(np.mean(v)) - F0)
            cert.append(c)
        return SphereScan(np.array(dF), float(np.mean(cert)) if cert else 1.0)
    except ConvergenceError as exc:
        return SphereScan(np.array([]), math.nan, False, str(exc))


def _values(batch, D, lam, max_sweeps):
    if batch.n_in:
        S = batch.support_matrix()
        cols = np.flatnonzero(batch.inlier_mask)
        sg = np.sign(batch.coefficients[S.T, cols].T)
        ev = evaluate(batch.signals, D, lam, S, sg, batch.inlier_mask, max_sweeps=max_sweeps)
    else:
        ev = evaluate(batch.signals, D, lam, max_sweeps=max_sweeps)
    return ev.values, float(np.mean(ev.certified))


def _theory(conf: ExperimentConfig, r: float, n: int):
    bound = uniform_lower_bound(conf.D0, conf.model, conf.lam_bar, r).bound
    try:
        eta = deviation_constants(conf.D0, conf.model, conf.lam, r, n, conf.x).eta
    except InfeasibleRadiusError:
        eta = math.inf
    return bound, eta


def run_delta_F(conf: ExperimentConfig, threads: int = 1) -> list:
    """Minimum and mean of ``F_X(D) - F_X(D0)`` over sampled sphere points, per (replicate, radius)."""
    batches = _map(lambda rep: draw_batch(conf, rep), range(conf.repeats), threads)
    F0s = _map(lambda b: _base_value(b, conf), batches, threads)
    cells = [(rep, ri, r) for rep in range(conf.repeats) for ri, r in enumerate(conf.radii)]

    def cell(c):
        rep, ri, r = c
        if F0s[rep] is None:
            scan = SphereScan(np.array([]), math.nan, False, "reference objective did not converge")
        else:
            scan = scan_sphere(batches[rep], conf.D0, sphere_directions(conf, rep, ri, r), conf.lam, conf.max_sweeps, F0s[rep])
        bound, eta = _theory(conf, r, conf.n)
        return _stamp(conf, dict(
            rep=rep, r=r, n=conf.n, n_dirs=conf.n_dirs, min_dF=scan.min,
            mean_dF=float(np.mean(scan.dF)) if scan.dF.size else math.nan,
            bound=bound, eta=eta, bound_minus_2eta=bound - 2 * eta,
            positive=bool(scan.converged and scan.min > 0), certified_fraction=scan.certified_fraction,
            converged=scan.converged, error=scan.error,
        ))

    return _map(cell, cells, threads)


def _base_value(batch, conf):
    try:
        return float(np.mean(_values(batch, conf.D0, conf.lam, conf.max_sweeps)[0]))
    except ConvergenceError:
        return None


# ---------------------------------------------------------------------------
# outliers

def adversarial_outliers(D0, target, lam: float, n_out: Optional[int], fro2: float) -> np.ndarray:
    """Outliers that lower the objective at ``target`` relative to ``D0``.

    The atom of ``target`` with the largest rotation angle is picked; call
    ``w`` its unit rotation direction. Each outlier is ``e d0_j + v`` where
    ``v = c D0 sign(D0^T w)`` (entry j zeroed) has reference correlations just
    below ``lam``, so it is left in the residual at D0 but partly explained
    by the rotated atom. Total squared norm is ``fro2``; with ``n_out=None``
    the count is chosen so that each outlier has about twice the energy of
    ``v``, which maximizes the first-order damage per unit energy. The
    construction is tuned for orthonormal references.
    """
    dec = decompose(D0, target)
    j = int(np.argmax(dec.theta))
    s = np.sign(D0.T @ dec.W[:, j])
    s[j] = 0.0
    v = D0 @ s
    c = 0.999 * lam
    v_energy = c**2 * float(v @ v)
    if n_out is None:
        n_out = max(1, int(round(fro2 / (2.0 * v_energy))))
    per = fro2 / n_out
    if per <= 2 * v_energy:
        scale, e = math.sqrt(per / 2 / v_energy), math.sqrt(per / 2)
    else:
        scale, e = 1.0, math.sqrt(per - v_energy)
    x = e * D0[:, j] + scale * c * v
    x *= math.sqrt(per) / np.linalg.norm(x)
    signs = np.where(np.arange(n_out) % 2 == 0, 1.0, -1.0)
    return np.tile(x[:, None], (1, n_out)) * signs


def _with_outliers(conf, batch, fro2, rng, target):
    n_out = conf.outlier_count  # negative means automatic
    if n_out == 0 or fro2 <= 0:
        return batch
    if conf.outlier_style == "adversarial":
        X_out = adversarial_outliers(conf.D0, target, conf.lam, None if n_out < 0 else n_out, fro2)
        m, p = batch.m, batch.p
        n_out = X_out.shape[1]
        return SignalBatch(
            np.hstack([batch.signals, X_out]),
            np.hstack([batch.coefficients, np.zeros((p, n_out))]),
            np.hstack([batch.noise, np.zeros((m, n_out))]),
            np.concatenate([batch.inlier_mask, np.zeros(n_out, dtype=bool)]),
            batch.k, batch.seed,
        )
    if n_out < 0:
        # as many outliers as it takes for each to carry a typical inlier energy
        typical = float(np.mean(np.sum(batch.inliers**2, axis=0))) if batch.n_in else 1.0
        n_out = max(1, int(round(fro2 / typical)))
    energy = math.sqrt(fro2 / n_out)
    if conf.outlier_style == "atom":
        dec = decompose(conf.D0, target)
        atoms = target[:, [int(np.argmax(dec.theta))]]
        return inject_outliers(batch, n_out, energy, rng, "atom", atoms)
    return inject_outliers(batch, n_out, energy, rng, "sphere")


def _column_sums(batch, dictionaries, lam, max_sweeps):
    """Sum of ``f_x(D)`` over the columns of ``batch`` for each dictionary."""
    return np.array([float(np.sum(_values(batch, D, lam, max_sweeps)[0])) for D in dictionaries])


def run_outlier_sweep(conf: ExperimentConfig, threads: int = 1) -> list:
    """Sphere minimum of the objective difference with outliers of growing energy.

    Outlier energy is ``ratio * threshold`` where the threshold is the naive
    budget on ``||X_out||_F^2`` (``outliers.threshold = limit`` uses its
    large-sample form ``2 n_in df``, ``finite`` subtracts the deviation term).
    For ``atom`` and ``adversarial`` styles the outliers target the sampled
    direction with the largest single-atom rotation.

    Inlier values do not depend on the ratio, so they are computed once per
    (replicate, radius) and only the outlier columns are solved per ratio.
    """
    rep0 = asymptotic_report(conf.D0, conf.model, conf.lam)
    batches = _map(lambda rep: draw_batch(conf, rep), range(conf.repeats), threads)
    cells = [(rep, ri, r) for rep in range(conf.repeats) for ri, r in enumerate(conf.radii)]
    lo, hi = rep0.radius_interval

    def cell(c):
        rep, ri, r = c
        n_in = conf.n
        th = outlier_thresholds(rep0, r, conf.x, n_in)
        naive = th.naive_limit if conf.outlier_threshold == "limit" else th.naive
        dirs = sphere_directions(conf, rep, ri, r)
        target = max(dirs, key=lambda D: float(np.max(decompose(conf.D0, D).theta))) if dirs else conf.D0
        batch = batches[rep]
        everything = [conf.D0] + dirs
        try:
            inl = _column_sums(batch, everything, conf.lam, conf.max_sweeps)
            inl_error = ""
        except ConvergenceError as exc:
            inl, inl_error = None, str(exc)
        rows = []
        for qi, q in enumerate(conf.outlier_ratios):
            full = _with_outliers(conf, batch, q * naive, substream(conf.seed, _OUTLIERS, rep, ri, qi), target)
            converged, error, dF = inl is not None, inl_error, np.array([])
            if converged:
                total = inl.copy()
                if full.n_out:
                    out_only = SignalBatch(full.outliers, np.zeros((full.p, full.n_out)), np.zeros((full.m, full.n_out)),
                                           np.zeros(full.n_out, dtype=bool), full.k, full.seed)
                    try:
                        total += _column_sums(out_only, everything, conf.lam, conf.max_sweeps)
                    except ConvergenceError as exc:
                        converged, error = False, str(exc)
                if converged:
                    dF = (total[1:] - total[0]) / full.n
            min_dF = float(dF.min()) if dF.size else math.nan
            positive = bool(converged and min_dF > 0)
            predicted = q <= 1.0 and lo < r < hi  # the budget only speaks for admissible radii
            rows.append(_stamp(conf, dict(
                rep=rep, r=r, style=conf.outlier_style, ratio=q, n_out=full.n_out,
                fro2_per_n_in=full.outlier_fro2 / n_in, norm12_per_n_in=full.outlier_norm12 / n_in,
                naive_threshold_per_n_in=naive / n_in,
                refined_threshold_per_n_in=None if th.refined is None else th.refined / n_in,
                min_dF=min_dF, positive=positive,
                within_prediction=bool(positive or not predicted),
                converged=converged, error=error,
            )))
        return rows

    return [row for rows in _map(cell, cells, threads) for row in rows]


# ---------------------------------------------------------------------------
# sample complexity

def run_sample_complexity_sweep(conf: ExperimentConfig, threads: int = 1) -> list:
    """Empirical failure rate of sphere positivity over replicates, per (n, radius)."""
    grid = conf.n_grid or (conf.n,)
    rep0 = asymptotic_report(conf.D0, conf.model, conf.lam)
    cells = [(n, rep) for n in grid for rep in range(conf.repeats)]

    def cell(c):
        n, rep = c
        batch = draw_batch(conf, rep, n)
        F0 = _base_value(batch, conf)
        out = []
        for ri, r in enumerate(conf.radii):
            if F0 is None:
                out.append((False, False))
                continue
            scan = scan_sphere(batch, conf.D0, sphere_directions(conf, rep, ri, r), conf.lam, conf.max_sweeps, F0)
            out.append((scan.converged, scan.converged and scan.min > 0))
        return out

    res = dict(zip(cells, _map(cell, cells, threads)))
    rows = []
    for n in grid:
        for ri, r in enumerate(conf.radii):
            flags = [res[(n, rep)][ri] for rep in range(conf.repeats)]
            conv = [c for c, _ in flags]
            fails = sum(1 for c, ok in flags if c and not ok)
            nc = max(sum(conv), 1)
            rate = fails / nc
            try:
                n_req = finite_sample_n(rep0, r, conf.x)
            except InfeasibleRadiusError:
                n_req = None
            rows.append(_stamp(conf, dict(
                n=n, r=r, repeats=conf.repeats, failures=fails, failure_rate=rate,
                stderr=math.sqrt(rate * (1 - rate) / nc), eta=_theory(conf, r, n)[1],
                n_required=n_req, converged_fraction=sum(conv) / len(conv),
            )))
    return rows


# ---------------------------------------------------------------------------
# alternating minimization

@dataclass
class LocalMinResult:
    D: np.ndarray
    final_radius: float
    iterations: int
    converged: bool
    F_trace: list = field(default_factory=list)
    sign_match_rate: float = math.nan
    diverged: bool = False


def dictionary_step(X, D, A) -> np.ndarray:
    """One sweep of per-atom least squares followed by renormalization.

    With the codes fixed, ``0.5 ||X - D A||_F^2`` restricted to atom j and to
    the unit sphere is minimized by ``R_j a_j^T / ||R_j a_j^T||`` where
    ``R_j`` is the residual without atom j, so the sweep never increases the
    objective. Unused atoms are left unchanged.
    """
    D = D.copy()
    R = X - D @ A
    for j in range(D.shape[1]):
        a = A[j]
        if not np.any(a):
            continue
        Rj = R + np.outer(D[:, j], a)
        v = Rj @ a
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        D[:, j] = v / nv
        R = Rj - np.outer(D[:, j], a)
    return D


def alternating_minimization(batch: SignalBatch, D_init, lam: float, max_iter: int = 500, tol: float = 1e-8,
                             max_sweeps: int = 10**5, D_ref=None) -> LocalMinResult:
    """Alternate Lasso coding and :func:`dictionary_step` until the dictionary moves less than ``tol``."""
    X = batch.signals
    D = np.array(D_init, dtype=float)
    A = None
    trace = []
    diverged = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        A = lasso_batch(X, D, lam, max_sweeps=max_sweeps, warm_start=A).alpha
        before = float(np.mean(lasso_objective(X, D, A, lam)))
        trace.append(before)
        D_new = dictionary_step(X, D, A)
        after = float(np.mean(lasso_objective(X, D_new, A, lam)))
        if after > before + 1e-9:
            diverged = True
        step = float(np.linalg.norm(D_new - D))
        D = D_new
        if diverged:
            break
        if step <= tol:
            converged = True
            break
    A = lasso_batch(X, D, lam, max_sweeps=max_sweeps, warm_start=A).alpha
    trace.append(float(np.mean(lasso_objective(X, D, A, lam))))
    ref = D if D_ref is None else D_ref
    match = math.nan
    if batch.n_in:
        inl = batch.inlier_mask
        match = float(np.mean(np.all(np.sign(A[:, inl]) == np.sign(batch.coefficients[:, inl]), axis=0)))
    return LocalMinResult(D, float(np.linalg.norm(D - ref)), it, converged, trace, match, diverged)


def run_local_min_search(conf: ExperimentConfig, threads: int = 1) -> list:
    """Alternating minimization from a point at distance ``r_init`` of D0, one row per replicate."""

    def cell(rep):
        batch = draw_batch(conf, rep)
        D_init = sample_sphere(conf.D0, conf.r_init, substream(conf.seed, _INIT, rep))
        row = dict(rep=rep, r_init=conf.r_init)
        try:
            res = alternating_minimization(batch, D_init, conf.lam, conf.max_iter, conf.step_tol, conf.max_sweeps, conf.D0)
            row.update(final_radius=res.final_radius, iterations=res.iterations, stopped=res.converged, converged=True,
                       F_initial=res.F_trace[0], F_final=res.F_trace[-1], sign_match_rate=res.sign_match_rate,
                       diverged=res.diverged, error="objective increased in a dictionary step" if res.diverged else "")
        except ConvergenceError as exc:
            row.update(final_radius=math.nan, iterations=0, stopped=False, converged=False, F_initial=math.nan, F_final=math.nan,
                       sign_match_rate=math.nan, diverged=False, error=str(exc))
        return _stamp(conf, row)

    return _map(cell, range(conf.repeats), threads)


def nonconverged_fraction(rows: list) -> float:
    if not rows:
        return 0.0
    flags = [r.get("converged", True) for r in rows]
    if "converged_fraction" in rows[0]:
        return 1.0 - float(np.mean([r["converged_fraction"] for r in rows]))
    return 1.0 - float(np.mean([bool(f) for f in flags]))
