"""Conditions and constants guaranteeing a local minimum near a reference dictionary.

:func:`asymptotic_report` evaluates, for a concrete ``(D0, model, lam)``, the
five conditions under which the expected cost has a local minimum within
distance r of D0 for every r in ``(C_min lam_bar, C_max lam_bar)``:

* cumulative coherence ``mu_k(D0) <= 1/4``
* sparsity ``k <= p / (16 (|||D0|||_2 + 1)^2)``
* flatness ``E[a^2] / (M_a E|a|) > 84 (|||D0|||_2 + 1) (k/p) ||D0^T D0 - I||_F / (1 - 2 mu_k)``
* penalty ``lam <= alpha_min / 4``
* noise ``M_eps / M_a < 7/2 (C_max - C_min) lam_bar``

with ``C_min = 24 kappa^2 (|||D0|||_2 + 1) (k/p) ||D0^T D0 - I||_F`` and
``C_max = 2/7 (E|a| / M_a) (1 - 2 mu_k)``. :func:`finite_sample_n` and
:func:`outlier_thresholds` turn the same quantities into a sufficient number
of training signals and into outlier energy budgets.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

from .dictionary import check_dictionary, cumulative_coherence, rip_constants, spectral_profile
from .errors import BudgetExceededError, InfeasibleRadiusError
from .model import CoefficientModel
from .phi import c_min, eta_n, lipschitz_constant

NOTE_CONSTANTS = (
    "sample size and outlier budgets use explicit proof-level constants; "
    "the deviation term is the eta_n bound rather than an unspecified constant"
)


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    rhs: float
    relation: str
    satisfied: bool


def _cond(name, lhs, rhs, relation):
    ops = {"<=": lambda a, b: a <= b, "<": lambda a, b: a < b, ">": lambda a, b: a > b}
    return Condition(name, float(lhs), float(rhs), relation, bool(ops[relation](lhs, rhs)))


@dataclass(frozen=True)
class TheoremReport:
    instance: dict
    conditions: tuple
    constants: dict
    finite_sample: Optional[dict] = None
    outlier: Optional[dict] = None
    notes: tuple = ()

    @property
    def all_satisfied(self) -> bool:
        return all(c.satisfied for c in self.conditions)

    def condition(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def radius_interval(self):
        return tuple(self.constants["radius_interval"])

    def noise_threshold(self, r: float) -> float:
        """Largest admissible relative noise level ``M_eps / M_a`` at radius ``r`` (strict)."""
        return 3.5 * (self.constants["C_max"] * self.constants["lam_bar"] - r)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conditions"] = [asdict(c) for c in self.conditions]
        d["all_satisfied"] = self.all_satisfied
        return d

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return json.dumps(clean(self.to_dict()), indent=2)


def asymptotic_report(D0, model: CoefficientModel, lam: float) -> TheoremReport:
    """Evaluate the asymptotic conditions and constants (never raises on failure)."""
    D0 = check_dictionary(D0)
    m, p = D0.shape
    k = model.k
    mu = cumulative_coherence(D0, k) if k < p else math.inf
    op, gres, frame = spectral_profile(D0)
    try:
        d_lo, d_hi, exact = rip_constants(D0, k, "exact")
    except BudgetExceededError:
        d_lo, d_hi, exact = rip_constants(D0, k, "coherence_bound")
    lam_bar = model.lam_bar(lam)
    cmin = c_min(op, gres, model)
    cmax = (2.0 / 7.0) * (model.abs_moment / model.m_alpha) * (1.0 - 2.0 * mu)
    flat = model.second_moment / (model.m_alpha * model.abs_moment)
    flat_rhs = 84.0 * (op + 1.0) * (k / p) * gres / (1.0 - 2.0 * mu) if mu < 0.5 else math.inf
    conditions = (
        _cond("cumulative_coherence", mu, 0.25, "<="),
        _cond("sparsity", k, p / (16.0 * (op + 1.0) ** 2), "<="),
        _cond("flatness_range", flat, flat_rhs, ">"),
        _cond("penalty_max", lam, model.alpha_min / 4.0, "<="),
        _cond("noise_given_penalty", model.m_eps / model.m_alpha, 3.5 * (cmax - cmin) * lam_bar, "<"),
    )
    instance = dict(
        m=m, p=p, k=k, mu_k=mu, op_norm=op, gram_residual=gres, frame_lower=frame,
        delta_lower=d_lo, delta_upper=d_hi, delta_exact=exact,
        alpha_min=model.alpha_min, m_alpha=model.m_alpha, m_eps=model.m_eps,
        second_moment=model.second_moment, abs_moment=model.abs_moment, kappa=model.kappa,
        lam=lam,
    )
    constants = dict(C_min=cmin, C_max=cmax, lam_bar=lam_bar, radius_interval=(cmin * lam_bar, cmax * lam_bar))
    return TheoremReport(instance, conditions, constants, notes=(NOTE_CONSTANTS,))


def _check_radius(report, r):
    lo, hi = report.radius_interval
    if not lo < r < hi:
        raise InfeasibleRadiusError(f"radius {r} outside the admissible interval ({lo:.6g}, {hi:.6g})")


def lipschitz_term(report: TheoremReport, r: float, mode: str = "bound") -> float:
    """``L + M_a^2 r``, either from its closed-form upper bound or from L itself."""
    inst = report.instance
    ma = inst["m_alpha"]
    if mode == "bound":
        rho = inst["m_eps"] / ma + report.constants["lam_bar"]
        return math.sqrt(20.0) * ma**2 * (r + rho + rho**2)
    return _lipschitz(inst, r) + ma**2 * r


def _lipschitz(inst, r):
    return lipschitz_constant(inst["m_alpha"], inst["m_eps"], inst["k"], inst["lam"], r, inst["delta_lower"], inst["delta_upper"])


def finite_sample_n(report: TheoremReport, r: float, x: float, lipschitz: str = "bound") -> int:
    """Number of inliers sufficient for a local minimum within r with probability 1 - 2 e^{-x}.

    ``(sqrt(2x) + 12 sqrt(pi m p))^2 (16 / E[a^2] (p/k) (L + M_a^2 r) / (r - C_min lam_bar))^2``,
    with ``L + M_a^2 r`` replaced by its closed-form upper bound unless
    ``lipschitz="exact"``.
    """
    _check_radius(report, r)
    inst = report.instance
    m, p, k = inst["m"], inst["p"], inst["k"]
    term = lipschitz_term(report, r, lipschitz)
    gap = r - report.constants["C_min"] * report.constants["lam_bar"]
    lead = (math.sqrt(2.0 * x) + 12.0 * math.sqrt(math.pi * m * p)) ** 2
    return int(math.ceil(lead * (16.0 / inst["second_moment"] * (p / k) * term / gap) ** 2))


@dataclass(frozen=True)
class OutlierThresholds:
    naive: float  # max ||X_out||_F^2
    refined: Optional[float]  # max ||X_out||_{1,2}; None when unavailable
    naive_limit: float  # 2 n_in delta_f, the n_in -> infinity form
    delta_f: float
    eta: float
    diagnostic: str = ""


def uniform_bound_value(report: TheoremReport, r: float) -> float:
    inst, c = report.instance, report.constants
    lb = c["lam_bar"]
    r_min = (2.0 / 3.0) * c["C_min"] * lb * (1.0 + 2.0 * lb)
    return inst["second_moment"] / 8.0 * (inst["k"] / inst["p"]) * r * (r - r_min)


def outlier_thresholds(report: TheoremReport, r: float, x: float, n_in: int, frame_lower: Optional[float] = None) -> OutlierThresholds:
    """Outlier energy budgets that keep the local minimum within radius r.

    ``naive`` bounds ``||X_out||_F^2`` by ``2 n_in (df - 2 eta)`` and
    ``refined`` bounds ``||X_out||_{1,2}`` by
    ``n_in (df - 2 eta) / (E|a| 18 p^{3/2} / sqrt(k) r lam_bar / A^{3/2})``, where
    ``df`` is the uniform lower bound at r, ``eta`` the deviation level with
    ``n_in`` inliers and ``A`` the lower frame bound of D0. A non-positive
    ``df - 2 eta`` yields zero budgets with a diagnostic.
    """
    inst, c = report.instance, report.constants
    A = inst["frame_lower"] if frame_lower is None else frame_lower
    df = uniform_bound_value(report, r)
    diag = []
    try:
        eta = eta_n(_lipschitz(inst, r), inst["m_alpha"], inst["m"], inst["p"], r, n_in, x)
    except InfeasibleRadiusError as exc:
        eta = math.inf
        diag.append(str(exc))
    budget = df - 2.0 * eta
    naive_limit = 2.0 * n_in * max(df, 0.0)
    if not budget > 0:
        diag.append(f"uniform lower bound {df:.4g} does not exceed 2 eta_n = {2 * eta:.4g}: zero budget")
        return OutlierThresholds(0.0, 0.0 if A > 0 else None, naive_limit, df, eta, "; ".join(diag))
    naive = 2.0 * n_in * budget
    refined = None
    if A <= 0:
        diag.append("D0 is not complete (lower frame bound 0): refined budget unavailable")
    elif r > min(math.sqrt(A) / 2.0, math.sqrt(1.0 - inst["delta_lower"])):
        diag.append("r exceeds min(sqrt(A)/2, sqrt(1 - delta_lower)): refined budget unavailable")
    else:
        k, p, lb = inst["k"], inst["p"], c["lam_bar"]
        denom = inst["abs_moment"] * (18.0 * p**1.5 / math.sqrt(k)) * r * lb / A**1.5
        refined = math.inf if denom == 0 else n_in * budget / denom
    return OutlierThresholds(naive, refined, naive_limit, df, eta, "; ".join(diag))


def theorem_report(D0, model: CoefficientModel, lam: float, r: Optional[float] = None, x: float = 3.0, n_in: Optional[int] = None) -> TheoremReport:
    """Asymptotic report, extended with sample size and outlier budgets at radius ``r``.

    When ``r`` is omitted the midpoint of the admissible radius interval is
    used (if the interval is nonempty).
    """
    rep = asymptotic_report(D0, model, lam)
    lo, hi = rep.radius_interval
    if r is None:
        if not lo < hi:
            return rep
        r = 0.5 * (lo + hi)
    fs = dict(r=r, x=x)
    try:
        fs["n_required"] = finite_sample_n(rep, r, x)
        fs["n_required_exact_L"] = finite_sample_n(rep, r, x, "exact")
    except InfeasibleRadiusError as exc:
        fs["n_required"] = None
        fs["error"] = str(exc)
    n_use = n_in if n_in is not None else fs.get("n_required")
    out = None
    if n_use:
        th = outlier_thresholds(rep, r, x, int(n_use))
        out = dict(n_in=int(n_use), naive_threshold=th.naive, refined_threshold=th.refined,
                   naive_limit=th.naive_limit, delta_f=th.delta_f, eta=th.eta, diagnostic=th.diagnostic)
    return replace(rep, finite_sample=fs, outlier=out)
