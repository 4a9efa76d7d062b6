"""Sparse coding objective: the Lasso and its sign-restricted closed form.

For a signal x, ``L_x(D, a) = 0.5 ||x - D a||^2 + lam ||a||_1`` and
``f_x(D) = min_a L_x(D, a)``. Given a sign pattern ``s`` with support ``J``
the restricted problem ``min_{a_J} 0.5 ||x - D_J a_J||^2 + lam s_J^T a_J`` has
the closed form solution::

    a_J = Theta_J (D_J^T x - lam s_J),  Theta_J = (D_J^T D_J)^{-1}
    phi_x(D|s) = 0.5 (||x||^2 - (D_J^T x - lam s_J)^T Theta_J (D_J^T x - lam s_J))

When the sign certificate of :func:`check_sign_recovery` holds, that vector is
the unique Lasso solution and ``f_x(D) = phi_x(D|s)``. The general problem is
solved by cyclic coordinate descent with a duality-gap stopping rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dictionary import EIG_TOL, check_dictionary, cumulative_coherence
from .errors import ConvergenceError, InvalidParameterError, RankDeficiencyError

MAX_SWEEPS = 10**5
BLOCK = 8192


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def lasso_objective(X, D, A, lam) -> np.ndarray:
    """Per-column value of ``0.5 ||x - D a||^2 + lam ||a||_1``."""
    X = np.asarray(X, dtype=float)
    R = X - D @ A
    return 0.5 * np.sum(R * R, axis=0) + lam * np.sum(np.abs(A), axis=0)


def default_tol(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return 1e-10 * (1.0 + np.sum(X * X, axis=0))


# ---------------------------------------------------------------------------
# closed form on a fixed sign pattern

@dataclass(frozen=True)
class RestrictedSolution:
    alpha_hat: np.ndarray
    phi_value: float
    sign_matches: bool
    support: np.ndarray


def _restricted_gram(D, J):
    DJ = D[:, J]
    G = DJ.T @ DJ
    ev = np.linalg.eigvalsh(G) if J.size else np.ones(1)
    if ev[0] <= EIG_TOL:
        raise RankDeficiencyError(J, ev[0])
    return DJ, G


def restricted_minimizer(x, D, s, lam: float) -> RestrictedSolution:
    """Closed form minimizer of the Lasso restricted to the sign pattern ``s``."""
    from scipy.linalg import cho_factor, cho_solve

    D = check_dictionary(D)
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    J = np.flatnonzero(s)
    alpha = np.zeros(D.shape[1])
    if J.size == 0:
        return RestrictedSolution(alpha, 0.5 * float(x @ x), True, J)
    DJ, G = _restricted_gram(D, J)
    b = DJ.T @ x - lam * s[J]
    aJ = cho_solve(cho_factor(G), b)
    alpha[J] = aJ
    phi = 0.5 * (float(x @ x) - float(b @ aJ))
    return RestrictedSolution(alpha, phi, bool(np.all(np.sign(aJ) == s[J])), J)


@dataclass(frozen=True)
class SignCertificate:
    restricted_sign_ok: bool
    dual_norm_margin: float
    passed: bool


@dataclass
class RestrictedBatch:
    """Closed form quantities for many signals, one support per column."""

    alpha: np.ndarray  # (n, k) coefficients on the support
    phi: np.ndarray  # (n,)
    sign_ok: np.ndarray  # (n,) bool
    margin: np.ndarray  # (n,)

    @property
    def passed(self):
        return self.sign_ok & (self.margin > 0)


def restricted_batch(X, D, supports, signs, lam: float, G=None, check_rank: bool = True) -> RestrictedBatch:
    """Vectorized closed form and sign certificate.

    ``supports`` is an ``(n, k)`` integer array and ``signs`` the matching
    ``(n, k)`` array of +-1; column i of ``X`` is paired with row i.
    """
    X = np.asarray(X, dtype=float)
    supports = np.asarray(supports, dtype=np.intp)
    signs = np.asarray(signs, dtype=float)
    n, k = supports.shape
    p = D.shape[1]
    if G is None:
        G = D.T @ D
    out = RestrictedBatch(np.empty((n, k)), np.empty(n), np.empty(n, dtype=bool), np.empty(n))
    if k == 0:
        out.phi[:] = 0.5 * np.sum(X * X, axis=0)
        out.sign_ok[:] = True
        Y = np.abs(D.T @ X)
        out.margin[:] = lam - (Y.max(axis=0) if p else 0.0)
        return out
    # quantities that only depend on the support are computed once per
    # distinct support
    keys = np.zeros(n, dtype=np.int64)
    for j in range(k):
        keys = keys * p + supports[:, j]
    _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    U = supports[first]
    GU = G[U[:, :, None], U[:, None, :]]
    if check_rank:
        ev = np.linalg.eigvalsh(GU)[:, 0]
        bad = np.flatnonzero(ev <= EIG_TOL)
        if bad.size:
            raise RankDeficiencyError(U[bad[0]], ev[bad[0]])
    ThetaU = np.linalg.inv(GU)
    if k < p:
        Z = np.einsum("uip,uij->upj", G[U], ThetaU)  # D^T D_J Theta_J
        irrep = np.abs(Z).sum(axis=2)
        irrep[np.arange(len(U))[:, None], U] = 0.0
        irrepU = irrep.max(axis=1)
    for a in range(0, n, BLOCK):
        b = min(n, a + BLOCK)
        S, sg, Xb, iv = supports[a:b], signs[a:b], X[:, a:b], inv[a:b]
        cols = np.arange(b - a)
        Theta = ThetaU[iv]
        C = D.T @ Xb  # all correlations, one BLAS call
        c = C[S.T, cols].T
        rhs = c - lam * sg
        alpha = np.einsum("nij,nj->ni", Theta, rhs)
        out.alpha[a:b] = alpha
        out.phi[a:b] = 0.5 * (np.einsum("mn,mn->n", Xb, Xb) - np.einsum("ni,ni->n", rhs, alpha))
        out.sign_ok[a:b] = np.all(np.sign(alpha) == sg, axis=1)
        if k < p:
            ls = np.einsum("nij,nj->ni", Theta, c)  # least-squares coefficients
            # correlations of the least-squares residual: D^T x - G[:, J] ls
            for j in range(k):
                C -= G[:, S[:, j]] * ls[:, j]
            rc = np.abs(C)
            rc[S.T, cols] = 0.0
            out.margin[a:b] = lam - rc.max(axis=0) - lam * irrepU[iv]
        else:
            out.margin[a:b] = lam
    return out


def check_sign_recovery(x, D, s, lam: float) -> SignCertificate:
    """Exact recovery certificate for the sign pattern ``s``.

    Passes when the closed form coefficients have sign ``s`` and
    ``||D_Jc^T (I - P_J) x||_inf + lam |||D_Jc^T D_J Theta_J|||_inf < lam``;
    the margin is ``lam`` minus the left-hand side of the second condition.
    """
    D = check_dictionary(D)
    s = np.asarray(s, dtype=float)
    J = np.flatnonzero(s)
    _restricted_gram(D, J)
    res = restricted_batch(np.asarray(x, dtype=float)[:, None], D, J[None, :], s[J][None, :], lam)
    return SignCertificate(bool(res.sign_ok[0]), float(res.margin[0]), bool(res.passed[0]))


def recovery_threshold_check(D, alpha0, x, lam: float, mu_k: float) -> bool:
    """Simple sufficient condition for exact sign recovery.

    True when every nonzero of ``alpha0`` is at least ``2 lam`` in magnitude
    and ``||x - D alpha0||_2 < lam (1 - 2 mu_k)``, with ``mu_k`` an upper bound
    on the cumulative coherence of ``D``.
    """
    alpha0 = np.asarray(alpha0, dtype=float)
    J = np.flatnonzero(alpha0)
    if J.size and np.min(np.abs(alpha0[J])) < 2 * lam:
        return False
    resid = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(D) @ alpha0)
    return bool(resid < lam * (1.0 - 2.0 * mu_k))


# ---------------------------------------------------------------------------
# coordinate descent

@dataclass
class LassoResult:
    alpha: np.ndarray  # (p, n)
    gap: np.ndarray
    kkt: np.ndarray
    sweeps: int
    converged: np.ndarray


def _gap_and_kkt(X, D, A, lam):
    R = X - D @ A
    Q = D.T @ R
    qmax = np.abs(Q).max(axis=0) if Q.shape[0] else np.zeros(X.shape[1])
    scale = np.where(qmax > lam, lam / np.where(qmax > 0, qmax, 1.0), 1.0)
    primal = 0.5 * np.sum(R * R, axis=0) + lam * np.sum(np.abs(A), axis=0)
    nu = R * scale
    dual = np.sum(X * nu, axis=0) - 0.5 * np.sum(nu * nu, axis=0)
    on = A != 0
    viol = np.where(on, np.abs(Q - lam * np.sign(A)), np.maximum(np.abs(Q) - lam, 0.0))
    kkt = viol.max(axis=0) if viol.shape[0] else np.zeros(X.shape[1])
    return primal - dual, kkt, Q


def lasso_batch(X, D, lam: float, tol=None, max_sweeps: int = MAX_SWEEPS, warm_start=None, raise_on_failure: bool = True) -> LassoResult:
    """Solve the Lasso for every column of ``X`` by cyclic coordinate descent.

    All columns are swept together (one coordinate at a time, vectorized over
    columns). A column stops once both its duality gap and its worst KKT
    violation are at most its tolerance, by default ``1e-10 (1 + ||x||^2)``.
    """
    if lam <= 0:
        raise InvalidParameterError("the penalty must be positive")
    D = check_dictionary(D)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    p, n = D.shape[1], X.shape[1]
    tol = default_tol(X) if tol is None else np.broadcast_to(np.asarray(tol, dtype=float), (n,)).copy()
    A = np.zeros((p, n)) if warm_start is None else np.array(warm_start, dtype=float).reshape(p, n)
    G = D.T @ D
    gap = np.full(n, np.inf)
    kkt = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    active = np.arange(n)
    sweeps = 0
    while True:
        Xa, Aa = X[:, active], A[:, active]
        g, v, Q = _gap_and_kkt(Xa, D, Aa, lam)
        gap[active], kkt[active] = g, v
        ok = (g <= tol[active]) & (v <= tol[active])
        done[active[ok]] = True
        keep = ~ok
        active, Q, Aa = active[keep], Q[:, keep], Aa[:, keep]
        if active.size == 0 or sweeps >= max_sweeps:
            break
        for j in range(p):
            z = Q[j] + G[j, j] * Aa[j]
            new = soft_threshold(z, lam) / G[j, j]
            delta = new - Aa[j]
            if np.any(delta):
                Q -= np.outer(G[:, j], delta)
                Aa[j] = new
        A[:, active] = Aa
        sweeps += 1
    if raise_on_failure and not done.all():
        raise ConvergenceError(float(np.max(gap[~done])), sweeps)
    return LassoResult(A, gap, kkt, sweeps, done)


def lasso_solve(x, D, lam: float, tol=None, max_sweeps: int = MAX_SWEEPS, warm_start=None) -> np.ndarray:
    """Lasso solution for a single signal (see :func:`lasso_batch`)."""
    x = np.asarray(x, dtype=float)
    ws = None if warm_start is None else np.asarray(warm_start, dtype=float)[:, None]
    return lasso_batch(x[:, None], D, lam, tol, max_sweeps, ws).alpha[:, 0]


def kkt_violation(x, D, alpha, lam: float) -> float:
    """Largest violation of the Lasso optimality conditions at ``alpha``."""
    x = np.asarray(x, dtype=float)[:, None]
    return float(_gap_and_kkt(x, np.asarray(D, dtype=float), np.asarray(alpha, dtype=float)[:, None], lam)[1][0])


def f_value(x, D, lam: float, tol=None) -> float:
    """``f_x(D)``, the minimum of the Lasso objective."""
    alpha = lasso_solve(x, D, lam, tol)
    return float(lasso_objective(np.asarray(x, dtype=float)[:, None], D, alpha[:, None], lam)[0])


@dataclass
class Evaluation:
    values: np.ndarray  # per-column f_x(D)
    certified: np.ndarray  # bool, value taken from the certified closed form
    codes: np.ndarray  # (p, n) minimizers
    sweeps: int


def evaluate(X, D, lam: float, supports=None, signs=None, hint_mask=None, tol=None, max_sweeps: int = MAX_SWEEPS) -> Evaluation:
    """Per-column ``f_x(D)`` with a certified shortcut.

    Columns flagged by ``hint_mask`` come with a candidate sign pattern
    (rows of ``supports`` / ``signs``, in the order of the flagged columns).
    Where the exact recovery certificate holds for that pattern the closed
    form value is exact and used directly; every other column is solved by
    coordinate descent, warm-started from the closed form when available.
    """
    D = check_dictionary(D)
    X = np.asarray(X, dtype=float)
    p, n = D.shape[1], X.shape[1]
    codes = np.zeros((p, n))
    values = np.empty(n)
    certified = np.zeros(n, dtype=bool)
    if hint_mask is not None and np.any(hint_mask):
        idx = np.flatnonzero(hint_mask)
        res = restricted_batch(X[:, idx], D, supports, signs, lam, check_rank=False)
        ok = res.passed & np.all(np.isfinite(res.alpha), axis=1)
        certified[idx[ok]] = True
        values[idx[ok]] = res.phi[ok]
        rows = np.flatnonzero(res.sign_ok & np.all(np.isfinite(res.alpha), axis=1))
        codes[supports[rows], idx[rows][:, None]] = res.alpha[rows]
    rest = np.flatnonzero(~certified)
    sweeps = 0
    if rest.size:
        t = None if tol is None else np.broadcast_to(tol, (n,))[rest]
        sol = lasso_batch(X[:, rest], D, lam, t, max_sweeps, warm_start=codes[:, rest])
        codes[:, rest] = sol.alpha
        values[rest] = lasso_objective(X[:, rest], D, sol.alpha, lam)
        sweeps = sol.sweeps
    return Evaluation(values, certified, codes, sweeps)


def objective_F(batch, D, lam: float, certified: bool = True, tol=None) -> float:
    """Average of ``f_x(D)`` over every column of a :class:`SignalBatch` (outliers included).

    With ``certified=True`` the ground-truth signs of the inliers are used as
    candidates for the closed-form shortcut of :func:`evaluate`.
    """
    return float(np.mean(evaluate_batch(batch, D, lam, certified, tol).values))


def evaluate_batch(batch, D, lam: float, certified: bool = True, tol=None) -> Evaluation:
    if certified and batch.n_in:
        S = batch.support_matrix()
        cols = np.flatnonzero(batch.inlier_mask)
        sg = np.sign(batch.coefficients[S.T, cols].T)
        return evaluate(batch.signals, D, lam, S, sg, batch.inlier_mask, tol)
    return evaluate(batch.signals, D, lam, tol=tol)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadiusCheck:
    mu_k: float
    C_max: float
    lam_bar: float
    noise_threshold: float
    admissible: bool
    violations: tuple


def recovery_radius_check(D0, model, lam: float, r: float) -> RadiusCheck:
    """Whether exact sign recovery is guaranteed for every D on the radius-r sphere.

    ``C_max = (2/7) (E|a| / M_a) (1 - 2 mu_k)``; the check passes when
    ``r < C_max lam_bar`` and ``M_eps < (7/2) (C_max lam_bar - r) M_a``;
    ``noise_threshold`` is the right-hand side of the latter. Violated
    preconditions are listed rather than raised.
    """
    D0 = check_dictionary(D0)
    k = model.k
    mu = cumulative_coherence(D0, k) if k < D0.shape[1] else math.inf
    lam_bar = model.lam_bar(lam)
    C_max = (2.0 / 7.0) * (model.abs_moment / model.m_alpha) * (1.0 - 2.0 * mu)
    noise_threshold = 3.5 * (C_max * lam_bar - r) * model.m_alpha
    violations = []
    if not mu < 0.5:
        violations.append(f"mu_k = {mu:.4g} is not below 1/2")
    if lam_bar > model.alpha_min / (2.0 * model.abs_moment):
        violations.append("lam_bar exceeds alpha_min / (2 E|alpha|)")
    if not r < C_max * lam_bar:
        violations.append("r is not below C_max * lam_bar")
    if not model.m_eps < noise_threshold:
        violations.append("noise level is not below the threshold")
    return RadiusCheck(mu, C_max, lam_bar, noise_threshold, not violations, tuple(violations))


proposition4_radius_check = recovery_radius_check  # name used by external callers
