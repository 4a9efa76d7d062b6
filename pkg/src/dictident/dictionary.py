"""Dictionaries with unit-norm atoms: constructors and structural constants.

A dictionary is a plain ``(m, p)`` float array whose columns (atoms) have unit
Euclidean norm. This module builds the standard families used in the
experiments and computes the quantities the identifiability conditions are
phrased in: coherence, cumulative coherence, restricted isometry constants,
operator norm, Gram residual and lower frame bound.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.fft import dct

from .errors import BudgetExceededError, InvalidDictionaryError, InvalidParameterError

UNIT_TOL = 1e-12
EIG_TOL = 1e-10
DEFAULT_RIP_BUDGET = 10**6


def check_dictionary(D, tol=UNIT_TOL) -> np.ndarray:
    """Return ``D`` as a float array after checking its columns are unit norm."""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] < 1 or D.shape[1] < 1:
        raise InvalidDictionaryError(f"expected a non-empty 2-d array, got shape {D.shape}")
    norms = np.linalg.norm(D, axis=0)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        j = bad[0]
        raise InvalidDictionaryError(
            f"atom {j} has norm {norms[j]:.15g}; all atoms must have unit norm"
        )
    return D


def normalize_columns(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    norms = np.linalg.norm(M, axis=0)
    if np.any(norms == 0):
        raise InvalidDictionaryError("cannot normalize a zero column")
    return M / norms


# ---------------------------------------------------------------------------
# constructors

def orthonormal(m: int) -> np.ndarray:
    """Identity basis of R^m."""
    return np.eye(m)


def onb_pair(m: int, kind: str = "dct") -> np.ndarray:
    """Union of the Dirac basis and an incoherent orthonormal basis (p = 2m).

    ``kind`` is ``"dct"`` (orthonormal DCT-II, coherence sqrt(2/m)) or
    ``"hadamard"`` (coherence 1/sqrt(m), m must be a power of two).
    """
    if kind == "dct":
        B = dct(np.eye(m), norm="ortho", axis=0)
    elif kind == "hadamard":
        from scipy.linalg import hadamard

        B = hadamard(m).astype(float) / math.sqrt(m)
    else:
        raise InvalidParameterError(f"unknown basis kind {kind!r}")
    return np.hstack([np.eye(m), B])


def spherical(m: int, p: int, rng=None) -> np.ndarray:
    """Gaussian matrix with columns normalized to the unit sphere."""
    rng = np.random.default_rng(rng)
    return normalize_columns(rng.standard_normal((m, p)))


def load_dictionary(path) -> np.ndarray:
    """Read a dictionary from ``.npy`` or from a comma/space separated text file."""
    path = str(path)
    if path.endswith(".npy"):
        D = np.load(path)
    else:
        D = np.loadtxt(path, delimiter="," if path.endswith(".csv") else None, ndmin=2)
    return check_dictionary(D, tol=1e-9)


# ---------------------------------------------------------------------------
# coherence

def _abs_offdiag_gram(D):
    G = np.abs(D.T @ D)
    np.fill_diagonal(G, 0.0)
    return G


def plain_coherence(D) -> float:
    """Largest absolute inner product between two distinct atoms."""
    D = check_dictionary(D)
    if D.shape[1] == 1:
        return 0.0
    return float(_abs_offdiag_gram(D).max())


def cumulative_coherence(D, k: int) -> float:
    """Cumulative coherence mu_k.

    For each atom j, the k largest absolute correlations with the other atoms are
    summed; mu_k is the largest such sum. ``k = 0`` gives 0.
    """
    D = check_dictionary(D)
    p = D.shape[1]
    if k < 0 or k >= p:
        raise InvalidParameterError(f"cumulative coherence needs 0 <= k < p (k={k}, p={p})")
    if k == 0:
        return 0.0
    G = _abs_offdiag_gram(D)
    # the zeroed diagonal is a minimal entry of its column; with k <= p - 1 it
    # can only be picked when it ties with an off-diagonal zero
    top = -np.partition(-G, k - 1, axis=0)[:k]
    return float(top.sum(axis=0).max())


def cumulative_coherence_bruteforce(D, k: int) -> float:
    """Enumerated version of :func:`cumulative_coherence` (for cross-checks)."""
    D = check_dictionary(D)
    p = D.shape[1]
    if k < 0 or k >= p:
        raise InvalidParameterError(f"cumulative coherence needs 0 <= k < p (k={k}, p={p})")
    best = 0.0
    for j in range(p):
        others = [i for i in range(p) if i != j]
        for J in itertools.combinations(others, k):
            best = max(best, float(np.abs(D[:, list(J)].T @ D[:, j]).sum()))
    return best


def coherence_transfer_bound(mu_k: float, mu_km1: float, k: int, r: float) -> float:
    """Upper bound on mu_k(D) for every D with unit atoms and ||D - D0||_F <= r."""
    if min(mu_k, mu_km1, k, r) < 0:
        raise InvalidParameterError("inputs must be nonnegative")
    return mu_k + math.sqrt(k) * r * (2.0 + mu_km1)


# ---------------------------------------------------------------------------
# restricted isometry constants

def iter_supports(p: int, k: int, chunk: int = 4096):
    """Yield all k-subsets of range(p) as ``(c, k)`` index arrays, in chunks."""
    it = itertools.combinations(range(p), k)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.intp).reshape(len(block), k)


def restricted_grams(G, supports) -> np.ndarray:
    """Stack of k x k Gram sub-matrices ``G[J, J]`` for each row J of ``supports``."""
    supports = np.asarray(supports, dtype=np.intp)
    return G[supports[:, :, None], supports[:, None, :]]


def rip_constants(D, k: int, mode: str = "exact", budget: int = DEFAULT_RIP_BUDGET):
    """Lower and upper restricted isometry constants of order k.

    Returns ``(delta_lower, delta_upper, exact)``. In ``"exact"`` mode every
    k-subset is scanned (raising :class:`BudgetExceededError` beyond ``budget``
    supports); ``"coherence_bound"`` returns mu_{k-1} for both constants.
    """
    D = check_dictionary(D)
    p = D.shape[1]
    if k < 1 or k > p:
        raise InvalidParameterError(f"need 1 <= k <= p (k={k}, p={p})")
    if mode == "coherence_bound":
        mu = cumulative_coherence(D, k - 1)
        return mu, mu, False
    if mode != "exact":
        raise InvalidParameterError(f"unknown mode {mode!r}")
    count = math.comb(p, k)
    if count > budget:
        raise BudgetExceededError(
            f"C({p},{k}) = {count} supports exceeds the budget {budget}; "
            "use mode='coherence_bound'"
        )
    G = D.T @ D
    lo, hi = np.inf, -np.inf
    for block in iter_supports(p, k):
        ev = np.linalg.eigvalsh(restricted_grams(G, block))
        lo = min(lo, float(ev[:, 0].min()))
        hi = max(hi, float(ev[:, -1].max()))
    return max(0.0, 1.0 - lo), max(0.0, hi - 1.0), True


def lower_rip(D, k: int, budget: int = DEFAULT_RIP_BUDGET):
    """Lower RIP constant, exact when affordable and the mu_{k-1} bound otherwise."""
    try:
        lo, _, exact = rip_constants(D, k, "exact", budget)
    except BudgetExceededError:
        lo, _, exact = rip_constants(D, k, "coherence_bound")
    return lo, exact


# ---------------------------------------------------------------------------
# spectral quantities

def spectral_profile(D):
    """Return ``(op_norm, gram_residual, frame_lower)``.

    ``op_norm`` is the largest singular value, ``gram_residual`` is
    ``||D^T D - I||_F`` and ``frame_lower`` is the smallest eigenvalue of
    ``D D^T`` (zero when D does not span R^m).
    """
    D = check_dictionary(D)
    m, p = D.shape
    G = D.T @ D
    resid = G - np.eye(p)
    np.fill_diagonal(resid, 0.0)
    gram_residual = float(np.linalg.norm(resid))
    if m <= p:
        ev = np.linalg.eigvalsh(D @ D.T)
        op_norm = math.sqrt(max(ev[-1], 0.0))
        frame_lower = float(max(ev[0], 0.0))
        if frame_lower < EIG_TOL:
            frame_lower = 0.0
    else:
        ev = np.linalg.eigvalsh(G)
        op_norm = math.sqrt(max(ev[-1], 0.0))
        frame_lower = 0.0
    return op_norm, gram_residual, frame_lower


def welch_bound(m: int, p: int) -> float:
    """Lower bound on ``||D^T D - I||_F`` for any m x p dictionary with unit atoms."""
    return math.sqrt(max(p * (p - m), 0) / m)


@dataclass(frozen=True)
class DictionaryProfile:
    k: int
    mu_1: float
    mu_k: float
    delta_lower_k: float
    delta_upper_k: float
    delta_exact: bool
    op_norm: float
    gram_residual: float
    frame_lower: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DictionaryProfile":
        return cls(**json.loads(text))


def profile(D, k: int, budget: int = DEFAULT_RIP_BUDGET) -> DictionaryProfile:
    """Collect every structural constant of ``D`` at sparsity ``k``."""
    D = check_dictionary(D)
    try:
        lo, hi, exact = rip_constants(D, k, "exact", budget)
    except BudgetExceededError:
        lo, hi, exact = rip_constants(D, k, "coherence_bound")
    op_norm, gram_residual, frame_lower = spectral_profile(D)
    return DictionaryProfile(
        k=k,
        mu_1=plain_coherence(D),
        mu_k=cumulative_coherence(D, k),
        delta_lower_k=lo,
        delta_upper_k=hi,
        delta_exact=exact,
        op_norm=op_norm,
        gram_residual=gram_residual,
        frame_lower=frame_lower,
    )
