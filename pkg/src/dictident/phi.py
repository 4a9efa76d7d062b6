"""Differences of the sign-restricted objective and their expectations.

Writing ``dphi = phi_x(D|s) - phi_x(D'|s)`` for ``x = D0 a + e`` splits it into
six pieces (``P_J`` is the projector onto span(D_J), ``D_J^+`` its
pseudo-inverse and ``Theta_J = (D_J^T D_J)^{-1}``; primes refer to ``D'``)::

    t_aa = 1/2 a^T D0^T (P'_J - P_J) D0 a
    t_ae = e^T (P'_J - P_J) D0 a
    t_ee = 1/2 e^T (P'_J - P_J) e
    t_sa = -lam s_J^T (D'_J^+ - D_J^+) D0 a
    t_se = -lam s_J^T (D'_J^+ - D_J^+) e
    t_ss = lam^2/2 s_J^T (Theta'_J - Theta_J) s_J

Under the white-coefficient model the expectation over signals of
``phi_x(D|s) - phi_x(D0|s)`` only involves three averages over uniformly
random supports J (see :class:`ExpectationTraces`)::

    E dphi = E[a^2]/2 * lead - lam E|a| * bias_sa + lam^2/2 * bias_ss

This module computes these quantities exactly (support enumeration) or by
Monte Carlo, together with their explicit bounds, the lower bounds they imply
on the sphere around D0, and the Lipschitz/deviation constants that control
finite-sample fluctuations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dictionary import (
    check_dictionary,
    iter_supports,
    lower_rip,
    restricted_grams,
    rip_constants,
    spectral_profile,
)
from .errors import BudgetExceededError, InfeasibleRadiusError, InvalidParameterError
from .lasso import _restricted_gram, restricted_batch
from .model import CoefficientModel, generate_batch
from .oblique import decompose

TRACE_BUDGET = 10**5
SUPPORT_BLOCK = 4096


@dataclass(frozen=True)
class DeltaPhiTerms:
    t_aa: float
    t_ae: float
    t_ee: float
    t_sa: float
    t_se: float
    t_ss: float

    @property
    def total(self) -> float:
        return self.t_aa + self.t_ae + self.t_ee + self.t_sa + self.t_se + self.t_ss


def _pinv_parts(D, J):
    DJ, G = _restricted_gram(D, J)
    Theta = np.linalg.inv(G)
    pinv = Theta @ DJ.T
    return DJ @ pinv, pinv, Theta


def delta_phi_terms(alpha0, noise, D, D_prime, lam: float, reference=None) -> DeltaPhiTerms:
    """Six-term split of ``phi_x(D|s) - phi_x(D'|s)``.

    The signal is ``x = reference @ alpha0 + noise`` (``reference`` defaults to
    ``D_prime``) and ``s``, ``J`` are the sign and support of ``alpha0``.
    """
    D = check_dictionary(D)
    D_prime = check_dictionary(D_prime)
    ref = D_prime if reference is None else check_dictionary(reference)
    alpha0 = np.asarray(alpha0, dtype=float)
    e = np.asarray(noise, dtype=float)
    J = np.flatnonzero(alpha0)
    sJ = np.sign(alpha0[J])
    y = ref @ alpha0
    P, pinv, Theta = _pinv_parts(D, J)
    P2, pinv2, Theta2 = _pinv_parts(D_prime, J)
    dP = P2 - P
    dpinv = pinv2 - pinv
    return DeltaPhiTerms(
        t_aa=0.5 * float(y @ dP @ y),
        t_ae=float(e @ dP @ y),
        t_ee=0.5 * float(e @ dP @ e),
        t_sa=-lam * float(sJ @ dpinv @ y),
        t_se=-lam * float(sJ @ dpinv @ e),
        t_ss=0.5 * lam**2 * float(sJ @ (Theta2 - Theta) @ sJ),
    )


def phi_values(X, D, supports, signs, lam: float) -> np.ndarray:
    """``phi_x(D|s)`` for each column of ``X`` and row of ``supports``/``signs``."""
    return restricted_batch(X, check_dictionary(D), supports, signs, lam).phi


def delta_phi_samples(D, D0, model: CoefficientModel, lam: float, n: int, rng=None) -> np.ndarray:
    """Per-signal ``phi_x(D|s0) - phi_x(D0|s0)`` for ``n`` fresh signals from ``model``."""
    batch = generate_batch(D0, model, n, rng)
    S = batch.support_matrix()
    sg = np.sign(batch.coefficients[S.T, np.arange(batch.n)].T)
    return phi_values(batch.signals, D, S, sg, lam) - phi_values(batch.signals, D0, S, sg, lam)


# ---------------------------------------------------------------------------
# expectations over the support

@dataclass(frozen=True)
class ExpectationTraces:
    """Support averages of the three traces entering the expected difference.

    ``lead`` = E_J Tr[D0_J^T (I - P_J) D0_J], ``bias_sa`` = E_J Tr(I - D_J^+ D0_J),
    ``bias_ss`` = E_J Tr(Theta0_J - Theta_J). ``stderr`` holds Monte Carlo
    standard errors (zeros for exact enumeration). The ``*_bound`` fields are
    the explicit bounds (``lead >= lead_bound``, ``|bias_sa| <= bias_sa_bound``,
    ``|bias_ss| <= bias_ss_bound``) in terms of the angle norm and of the constants
    ``A`` (Gram residual), ``B`` (operator norm) and ``delta`` (lower RIP
    constant), when requested.
    """

    lead: float
    bias_sa: float
    bias_ss: float
    method: str
    n_supports: int
    stderr: tuple = (0.0, 0.0, 0.0)
    theta_norm: float = math.nan
    A: float = math.nan
    B: float = math.nan
    delta: float = math.nan
    lead_bound: float = math.nan
    bias_sa_bound: float = math.nan
    bias_ss_bound: float = math.nan


def _trace_terms(G, G0, H, N, dG, S):
    """Per-support traces for the ``(c, k)`` support array ``S``.

    Everything is expressed through small Gram blocks of ``D``, ``D0`` and
    ``Delta = D - D0`` (``H = Delta^T Delta``, ``N = D^T Delta``,
    ``dG = D^T D - D0^T D0``) so that each trace is computed without
    cancellation when ``D`` is close to ``D0``. Uses
    ``(I - P_J) D0_J = -(I - P_J) Delta_J``.
    """
    Theta = np.linalg.inv(restricted_grams(G, S))
    Theta0 = np.linalg.inv(restricted_grams(G0, S))
    NJ = restricted_grams(N, S)
    lead = np.trace(restricted_grams(H, S), axis1=1, axis2=2) - np.einsum("cij,cjl,cil->c", Theta, NJ, NJ)
    bias_sa = np.einsum("cij,cji->c", Theta, NJ)
    bias_ss = np.einsum("cij,cjl,cli->c", Theta0, restricted_grams(dG, S), Theta)
    return lead, bias_sa, bias_ss


def _support_sampler(p, k, n_J, rng):
    rng = np.random.default_rng(rng)
    done = 0
    while done < n_J:
        c = min(SUPPORT_BLOCK, n_J - done)
        yield np.sort(np.argsort(rng.random((c, p)), axis=1)[:, :k], axis=1)
        done += c


def expectation_traces(
    D,
    D0,
    k: int,
    mode: str = "auto",
    n_J: int = 20000,
    rng=None,
    budget: int = TRACE_BUDGET,
    bounds: bool = False,
    A: Optional[float] = None,
    B: Optional[float] = None,
    delta: Optional[float] = None,
) -> ExpectationTraces:
    """Average the three traces over uniformly random k-supports.

    ``mode`` is ``"exact"`` (all C(p, k) supports, error past ``budget``),
    ``"monte_carlo"`` (``n_J`` random supports) or ``"auto"``. With
    ``bounds=True`` the explicit bounds are evaluated too; ``A``, ``B`` and
    ``delta`` default to the smallest values valid for the pair.
    """
    D = check_dictionary(D)
    D0 = check_dictionary(D0)
    p = D.shape[1]
    if not 1 <= k <= p:
        raise InvalidParameterError(f"need 1 <= k <= p (k={k}, p={p})")
    count = math.comb(p, k)
    if mode == "auto":
        mode = "exact" if count <= budget else "monte_carlo"
    if mode == "exact" and count > budget:
        raise BudgetExceededError(f"C({p},{k}) = {count} supports exceeds the budget {budget}")
    Delta = D - D0
    G, G0 = D.T @ D, D0.T @ D0
    H, N = Delta.T @ Delta, D.T @ Delta
    dG = Delta.T @ D + D0.T @ Delta
    if mode == "exact":
        blocks, total = iter_supports(p, k, SUPPORT_BLOCK), count
    elif mode == "monte_carlo":
        blocks, total = _support_sampler(p, k, n_J, rng), n_J
    else:
        raise InvalidParameterError(f"unknown mode {mode!r}")
    sums = np.zeros(3)
    sq = np.zeros(3)
    for S in blocks:
        vals = np.vstack(_trace_terms(G, G0, H, N, dG, S))
        sums += vals.sum(axis=1)
        if mode == "monte_carlo":
            sq += (vals * vals).sum(axis=1)
    mean = sums / total
    if mode == "monte_carlo":
        var = np.maximum(sq / total - mean**2, 0.0) * total / max(total - 1, 1)
        stderr = tuple(float(v) for v in np.sqrt(var / total))
    else:
        stderr = (0.0, 0.0, 0.0)
    out = dict(lead=float(mean[0]), bias_sa=float(mean[1]), bias_ss=float(mean[2]), method=mode, n_supports=total, stderr=stderr)
    if bounds:
        out.update(trace_bounds(D, D0, k, A, B, delta))
    return ExpectationTraces(**out)


def pair_constants(D, D0, k: int):
    """Smallest ``(A, B, delta)`` valid for both dictionaries of a pair."""
    B1, A1, _ = spectral_profile(D)
    B0, A0, _ = spectral_profile(D0)
    d1, _ = lower_rip(D, k)
    d0, _ = lower_rip(D0, k)
    return max(A1, A0), max(B1, B0), max(d1, d0)


def trace_bounds(D, D0, k: int, A=None, B=None, delta=None) -> dict:
    """Explicit bounds on the three traces in terms of ``||theta(D0, D)||``."""
    p = D.shape[1]
    if A is None or B is None or delta is None:
        A_, B_, d_ = pair_constants(D, D0, k)
        A = A_ if A is None else A
        B = B_ if B is None else B
        delta = d_ if delta is None else delta
    th = float(np.linalg.norm(decompose(D0, D).theta))
    kp = k / p
    return dict(
        theta_norm=th,
        A=float(A),
        B=float(B),
        delta=float(delta),
        lead_bound=kp * th**2 * (1.0 - kp * B**2 / (1.0 - delta)),
        bias_sa_bound=0.5 * kp * th**2 + kp**2 * A * B / (1.0 - delta) * th,
        bias_ss_bound=kp**2 * 4.0 * A * B / (1.0 - delta) ** 2 * th,
    )


def combine_traces(tr: ExpectationTraces, model: CoefficientModel, lam: float) -> float:
    return 0.5 * model.second_moment * tr.lead - lam * model.abs_moment * tr.bias_sa + 0.5 * lam**2 * tr.bias_ss


def expected_delta_phi(D, D0, model: CoefficientModel, lam: float, mode: str = "auto", **kw) -> float:
    """Expectation over signals of ``phi_x(D|s0) - phi_x(D0|s0)``."""
    tr = expectation_traces(D, D0, model.k, mode, **kw)
    return combine_traces(tr, model, lam)


# ---------------------------------------------------------------------------
# lower bounds

@dataclass(frozen=True)
class FixedPairBound:
    bound: float
    r0: float
    assumptions_ok: bool
    A: float
    B: float
    delta: float


def lower_bound_fixed_pair(D, D0, model: CoefficientModel, lam_bar: float, A=None, B=None, delta=None) -> FixedPairBound:
    """Lower bound on the expected difference for one dictionary pair.

    ``bound = E[a^2]/4 (k/p) d (d - r0)`` with ``d = ||D - D0||_F`` and
    ``r0 = (1 + 2 lam_bar) lam_bar kappa^2 (k/p) 2AB / (1 - delta)^2``; it holds
    when ``(k/p) B^2 / (1 - delta) + lam_bar kappa^2 <= 1/2``.
    """
    D = check_dictionary(D)
    D0 = check_dictionary(D0)
    k, p = model.k, D.shape[1]
    if A is None or B is None or delta is None:
        A_, B_, d_ = pair_constants(D, D0, k)
        A = A_ if A is None else A
        B = B_ if B is None else B
        delta = d_ if delta is None else delta
    kp = k / p
    k2 = model.kappa**2
    ok = kp * B**2 / (1.0 - delta) + lam_bar * k2 <= 0.5
    r0 = (1.0 + 2.0 * lam_bar) * lam_bar * k2 * kp * 2.0 * A * B / (1.0 - delta) ** 2
    d = float(np.linalg.norm(D - D0))
    return FixedPairBound(0.25 * model.second_moment * kp * d * (d - r0), r0, bool(ok), float(A), float(B), float(delta))


def c_min(op_norm: float, gram_residual: float, model: CoefficientModel) -> float:
    """``24 kappa^2 (|||D0||| + 1) (k/p) ||D0^T D0 - I||_F``."""
    return 24.0 * model.kappa**2 * (op_norm + 1.0) * (model.k / model.p) * gram_residual


@dataclass(frozen=True)
class UniformBound:
    bound: float
    r_min: float
    C_min: float
    valid: bool
    violations: tuple


def uniform_lower_bound(D0, model: CoefficientModel, lam_bar: float, r: float, delta_lower=None) -> UniformBound:
    """Lower bound on the expected difference, uniform over the radius-r sphere.

    ``bound = E[a^2]/8 (k/p) r (r - r_min)`` with
    ``r_min = 2/3 C_min lam_bar (1 + 2 lam_bar)``. Preconditions are reported
    in ``valid``/``violations`` rather than raised.
    """
    D0 = check_dictionary(D0)
    k, p = model.k, D0.shape[1]
    op, gres, _ = spectral_profile(D0)
    cm = c_min(op, gres, model)
    r_min = (2.0 / 3.0) * cm * lam_bar * (1.0 + 2.0 * lam_bar)
    if delta_lower is None:
        delta_lower, _ = lower_rip(D0, k)
    violations = []
    if lam_bar > 0.25:
        violations.append("lam_bar > 1/4")
    if r > 0.15:
        violations.append("r > 0.15")
    if delta_lower > 0.25:
        violations.append("lower RIP constant of D0 > 1/4")
    if k > p / (16.0 * (op + 1.0) ** 2):
        violations.append("k > p / (16 (|||D0||| + 1)^2)")
    bound = model.second_moment / 8.0 * (k / p) * r * (r - r_min)
    return UniformBound(bound, r_min, cm, not violations, tuple(violations))


# ---------------------------------------------------------------------------
# finite-sample constants

@dataclass(frozen=True)
class DeviationConstants:
    L: float
    eta: float


def lipschitz_constant(m_alpha: float, m_eps: float, k: int, lam: float, r: float, delta_lower: float, delta_upper: float) -> float:
    """Almost-sure Lipschitz constant of the fluctuation of the restricted objective difference on the radius-r ball."""
    s = math.sqrt(1.0 - delta_lower) - r
    if s <= 0:
        raise InfeasibleRadiusError(f"r = {r} is not below sqrt(1 - delta_lower) = {math.sqrt(1 - delta_lower):.6g}")
    t = m_eps + lam * math.sqrt(k) / s
    return (1.0 / s) * t * (2.0 * math.sqrt(1.0 + delta_upper) * m_alpha + t)


def eta_n(L: float, m_alpha: float, m: int, p: int, r: float, n: int, x: float) -> float:
    """Uniform deviation level ``r (L + M_a^2 r) (sqrt(2x/n) + 12 sqrt(pi m p / n))``."""
    return r * (L + m_alpha**2 * r) * (math.sqrt(2.0 * x / n) + 12.0 * math.sqrt(math.pi * m * p / n))


def deviation_constants(D0, model: CoefficientModel, lam: float, r: float, n: int, x: float, delta=None) -> DeviationConstants:
    """Lipschitz constant L and the uniform deviation level eta_n on the radius-r sphere.

    ``delta`` optionally supplies ``(delta_lower, delta_upper)`` of D0; by
    default they are computed exactly when affordable and bounded by the
    cumulative coherence otherwise.
    """
    D0 = check_dictionary(D0)
    if delta is None:
        try:
            lo, hi, _ = rip_constants(D0, model.k, "exact")
        except BudgetExceededError:
            lo, hi, _ = rip_constants(D0, model.k, "coherence_bound")
    else:
        lo, hi = delta
    L = lipschitz_constant(model.m_alpha, model.m_eps, model.k, lam, r, lo, hi)
    return DeviationConstants(L, eta_n(L, model.m_alpha, D0.shape[0], D0.shape[1], r, n, x))
