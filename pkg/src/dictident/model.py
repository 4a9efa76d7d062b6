"""Generative model for sparse signals: x = D0 alpha + noise, plus outliers.

Supports are uniform k-subsets of the atoms. On the support, coefficients have
i.i.d. Rademacher signs and either i.i.d. uniform magnitudes in
``[alpha_min, alpha_max]`` (:class:`SignedUniform`) or a fixed amplitude
profile assigned through a random permutation (:class:`FixedProfile`). Noise is
an isotropic Gaussian conditioned on ``||noise||_2 <= bound``.

Random draws for a batch are organised in fixed-size column chunks, each with
its own Philox stream keyed by ``(seed, chunk index)``, so the mapping from
``(seed, column)`` to the draw does not depend on how chunks are scheduled.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Union

import numpy as np

from .dictionary import check_dictionary
from .errors import ConfigError, InvalidParameterError

CHUNK = 4096
MAX_REJECTION_ROUNDS = 1000


@dataclass(frozen=True)
class SignedUniform:
    """Magnitudes i.i.d. uniform on ``[alpha_min, alpha_max]``, random signs."""

    alpha_min: float
    alpha_max: float

    def __post_init__(self):
        if not 0 < self.alpha_min <= self.alpha_max:
            raise InvalidParameterError("need 0 < alpha_min <= alpha_max")


@dataclass(frozen=True)
class FixedProfile:
    """Fixed magnitudes ``amplitudes`` spread over the support by a random permutation."""

    amplitudes: tuple

    def __post_init__(self):
        a = tuple(float(v) for v in self.amplitudes)
        if not a or min(a) <= 0:
            raise InvalidParameterError("amplitudes must be positive")
        object.__setattr__(self, "amplitudes", a)


@dataclass(frozen=True)
class TruncatedGaussian:
    """Isotropic Gaussian with per-entry std ``sigma``, resampled until its norm is <= ``bound``."""

    sigma: float
    bound: float

    def __post_init__(self):
        if self.sigma <= 0 or self.bound <= 0:
            raise InvalidParameterError("sigma and bound must be positive")


@dataclass(frozen=True)
class CoefficientModel:
    """Law of the sparse coefficients and of the noise.

    Closed-form moments are exposed as properties: ``second_moment`` is
    E[alpha^2] and ``abs_moment`` is E|alpha| for a single nonzero entry,
    ``m_alpha`` / ``m_eps`` are almost-sure bounds on ``||alpha||_2`` and
    ``||noise||_2``, and ``kappa = abs_moment / sqrt(second_moment)``.
    """

    p: int
    k: int
    distribution: Union[SignedUniform, FixedProfile]
    noise: Optional[TruncatedGaussian] = None

    def __post_init__(self):
        if not 1 <= self.k <= self.p:
            raise InvalidParameterError(f"need 1 <= k <= p (k={self.k}, p={self.p})")
        if isinstance(self.distribution, FixedProfile) and len(self.distribution.amplitudes) != self.k:
            raise InvalidParameterError("amplitude profile must have exactly k entries")

    @property
    def alpha_min(self) -> float:
        d = self.distribution
        return d.alpha_min if isinstance(d, SignedUniform) else min(d.amplitudes)

    @property
    def m_alpha(self) -> float:
        d = self.distribution
        if isinstance(d, SignedUniform):
            return math.sqrt(self.k) * d.alpha_max
        return math.sqrt(sum(a * a for a in d.amplitudes))

    @property
    def m_eps(self) -> float:
        return 0.0 if self.noise is None else self.noise.bound

    @property
    def second_moment(self) -> float:
        d = self.distribution
        if isinstance(d, SignedUniform):
            a, b = d.alpha_min, d.alpha_max
            return (a * a + a * b + b * b) / 3.0  # (b^3 - a^3) / (3 (b - a)) without cancellation
        return sum(a * a for a in d.amplitudes) / self.k

    @property
    def abs_moment(self) -> float:
        d = self.distribution
        if isinstance(d, SignedUniform):
            return 0.5 * (d.alpha_min + d.alpha_max)
        return sum(d.amplitudes) / self.k

    @property
    def kappa(self) -> float:
        return self.abs_moment / math.sqrt(self.second_moment)

    def lam_from_bar(self, lam_bar: float) -> float:
        return lam_bar * self.abs_moment

    def lam_bar(self, lam: float) -> float:
        return lam / self.abs_moment


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SignalBatch:
    """Training signals with their ground truth.

    ``signals`` is ``(m, n)``; ``coefficients`` is ``(p, n)`` and vanishes on
    outlier columns; ``noise`` is ``(m, n)`` (zero on outliers); ``inlier_mask``
    flags the columns drawn from the model.
    """

    signals: np.ndarray
    coefficients: np.ndarray
    noise: np.ndarray
    inlier_mask: np.ndarray
    k: int
    seed: Optional[int] = None
    _support_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("signals", "coefficients", "noise", "inlier_mask"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        n = self.signals.shape[1]
        if self.coefficients.shape[1] != n or self.noise.shape != self.signals.shape or self.inlier_mask.shape != (n,):
            raise InvalidParameterError("inconsistent batch shapes")

    @property
    def m(self) -> int:
        return self.signals.shape[0]

    @property
    def p(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n(self) -> int:
        return self.signals.shape[1]

    @property
    def n_in(self) -> int:
        return int(self.inlier_mask.sum())

    @property
    def n_out(self) -> int:
        return self.n - self.n_in

    @property
    def signs(self) -> np.ndarray:
        return np.sign(self.coefficients).astype(np.int8)

    @property
    def supports(self) -> list:
        """Per-column sorted index arrays (empty for outliers)."""
        return [np.flatnonzero(self.coefficients[:, i]) for i in range(self.n)]

    def support_matrix(self) -> np.ndarray:
        """``(n_in, k)`` array of sorted supports of the inlier columns."""
        if "supports" not in self._support_cache:
            A = self.coefficients[:, self.inlier_mask]
            rows, cols = np.nonzero(A.T)
            S = cols.reshape(-1, self.k)
            if S.shape[0] != A.shape[1]:
                raise InvalidParameterError("an inlier column does not have exactly k nonzeros")
            self._support_cache["supports"] = _readonly(S)
        return self._support_cache["supports"]

    @property
    def inliers(self) -> np.ndarray:
        return self.signals[:, self.inlier_mask]

    @property
    def outliers(self) -> np.ndarray:
        return self.signals[:, ~self.inlier_mask]

    @property
    def outlier_fro2(self) -> float:
        """Squared Frobenius norm of the outlier columns."""
        return float(np.sum(self.outliers**2))

    @property
    def outlier_norm12(self) -> float:
        """Sum of the Euclidean norms of the outlier columns."""
        return float(np.linalg.norm(self.outliers, axis=0).sum())


# ---------------------------------------------------------------------------
# random draws

def as_seed(rng) -> int:
    """Turn an int / None / Generator into a 64-bit integer seed."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    if rng is None:
        return int(np.random.SeedSequence().entropy % 2**64)
    seed = int(rng)
    if not 0 <= seed < 2**64:
        raise InvalidParameterError("seed must fit in an unsigned 64-bit integer")
    return seed


def substream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator determined by ``seed`` and an integer key path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def draw_support(p: int, k: int, rng) -> np.ndarray:
    """Uniformly random k-subset of ``range(p)``, sorted."""
    if k < 1 or k > p:
        raise InvalidParameterError(f"need 1 <= k <= p (k={k}, p={p})")
    return np.sort(rng.choice(p, size=k, replace=False))


def _magnitudes(model: CoefficientModel, c: int, rng) -> np.ndarray:
    d = model.distribution
    if isinstance(d, SignedUniform):
        return rng.uniform(d.alpha_min, d.alpha_max, size=(c, model.k))
    a = np.asarray(d.amplitudes)
    perm = np.argsort(rng.random((c, model.k)), axis=1)
    return a[perm]


def _rademacher(shape, rng):
    return 2.0 * rng.integers(0, 2, size=shape) - 1.0


def draw_coefficients(model: CoefficientModel, support, rng) -> np.ndarray:
    """Sparse p-vector with the given support, drawn from ``model``."""
    support = np.asarray(support, dtype=np.intp)
    if support.shape != (model.k,):
        raise InvalidParameterError(f"support must have exactly k={model.k} entries")
    alpha = np.zeros(model.p)
    alpha[support] = _rademacher(model.k, rng) * _magnitudes(model, 1, rng)[0]
    return alpha


def draw_noise(noise: Optional[TruncatedGaussian], m: int, n: int, rng) -> np.ndarray:
    """``(m, n)`` noise matrix with columns conditioned on ``||e||_2 <= bound``.

    Rejected columns are redrawn; after ``MAX_REJECTION_ROUNDS`` rounds with
    columns still pending an error is raised (the bound is then far below the
    typical norm ``sigma sqrt(m)``).
    """
    E = np.zeros((m, n))
    if noise is None or n == 0:
        return E
    todo = np.arange(n)
    for _ in range(MAX_REJECTION_ROUNDS):
        E[:, todo] = noise.sigma * rng.standard_normal((m, todo.size))
        todo = todo[np.linalg.norm(E[:, todo], axis=0) > noise.bound]
        if not todo.size:
            return E
    raise InvalidParameterError(
        f"noise bound {noise.bound} is too small for sigma {noise.sigma} in dimension {m}: "
        "rejection sampling does not terminate"
    )


def _draw_chunk(D, model, c, rng):
    m, p = D.shape
    k = model.k
    supports = np.sort(np.argsort(rng.random((c, p)), axis=1)[:, :k], axis=1)
    values = _rademacher((c, k), rng) * _magnitudes(model, c, rng)
    A = np.zeros((p, c))
    A[supports.T, np.arange(c)] = values.T
    E = draw_noise(model.noise, m, c, rng)
    return A, E


def generate_batch(D0, model: CoefficientModel, n: int, rng=None, workers: int = 1) -> SignalBatch:
    """Draw ``n`` inlier signals ``x = D0 alpha + noise``.

    ``rng`` may be an integer seed, ``None`` or a Generator (which is used only
    to draw the seed). Columns are generated in chunks of ``CHUNK`` with one
    independent stream per chunk, optionally on ``workers`` threads; the output
    is bit-identical for any worker count.
    """
    D0 = check_dictionary(D0)
    if model.p != D0.shape[1]:
        raise InvalidParameterError(f"model has p={model.p} but dictionary has {D0.shape[1]} atoms")
    if n < 0:
        raise InvalidParameterError("n must be nonnegative")
    seed = as_seed(rng)
    m, p = D0.shape
    starts = list(range(0, n, CHUNK))

    def job(i):
        c = min(CHUNK, n - starts[i])
        return _draw_chunk(D0, model, c, substream(seed, i))

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, range(len(starts))))
    else:
        parts = [job(i) for i in range(len(starts))]
    A = np.hstack([a for a, _ in parts]) if parts else np.zeros((p, 0))
    E = np.hstack([e for _, e in parts]) if parts else np.zeros((m, 0))
    X = D0 @ A + E
    return SignalBatch(X, A, E, np.ones(n, dtype=bool), model.k, seed)


def random_unit_vectors(m: int, n: int, rng) -> np.ndarray:
    G = rng.standard_normal((m, n))
    return G / np.linalg.norm(G, axis=0)


def inject_outliers(batch: SignalBatch, n_out: int, energy, rng, style: str = "sphere", atoms=None) -> SignalBatch:
    """Append ``n_out`` outlier columns of Euclidean norm ``energy``.

    ``style="sphere"`` draws directions uniformly on the unit sphere.
    ``style="atom"`` aligns each outlier with a random signed column of
    ``atoms`` (an ``(m, q)`` matrix with unit columns).
    """
    if n_out == 0:
        return batch
    energy = np.broadcast_to(np.asarray(energy, dtype=float), (n_out,))
    if np.any(energy <= 0):
        raise InvalidParameterError("outlier energy must be positive")
    rng = np.random.default_rng(rng)
    m = batch.m
    if style == "sphere":
        U = random_unit_vectors(m, n_out, rng)
    elif style == "atom":
        if atoms is None:
            raise InvalidParameterError("style='atom' needs the atoms to align with")
        atoms = check_dictionary(atoms, tol=1e-9)
        idx = rng.integers(0, atoms.shape[1], size=n_out)
        U = atoms[:, idx] * _rademacher(n_out, rng)
    else:
        raise InvalidParameterError(f"unknown outlier style {style!r}")
    X_out = U * energy
    return SignalBatch(
        np.hstack([batch.signals, X_out]),
        np.hstack([batch.coefficients, np.zeros((batch.p, n_out))]),
        np.hstack([batch.noise, np.zeros((m, n_out))]),
        np.concatenate([batch.inlier_mask, np.zeros(n_out, dtype=bool)]),
        batch.k,
        batch.seed,
    )


def with_signals(batch: SignalBatch, signals) -> SignalBatch:
    return replace(batch, signals=signals, _support_cache={})


# ---------------------------------------------------------------------------
# serialization

def save_batch_csv(batch: SignalBatch, path) -> None:
    """One signal per row: ``inlier, x0..x{m-1}, a0..a{p-1}, e0..e{m-1}``."""
    m, p = batch.m, batch.p
    header = ["inlier"] + [f"x{i}" for i in range(m)] + [f"a{j}" for j in range(p)] + [f"e{i}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(batch.n):
            row = [int(batch.inlier_mask[i])]
            row += [repr(float(v)) for v in batch.signals[:, i]]
            row += [repr(float(v)) for v in batch.coefficients[:, i]]
            row += [repr(float(v)) for v in batch.noise[:, i]]
            w.writerow(row)


def load_batch_csv(path, k: int) -> SignalBatch:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [list(map(float, row)) for row in r]
    m = sum(1 for h in header if h.startswith("x"))
    p = sum(1 for h in header if h.startswith("a"))
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    mask = data[:, 0].astype(bool)
    X = data[:, 1 : 1 + m].T
    A = data[:, 1 + m : 1 + m + p].T
    E = data[:, 1 + m + p :].T
    return SignalBatch(X, A, E, mask, k)


def save_batch_npz(batch: SignalBatch, path) -> None:
    np.savez(
        path,
        signals=batch.signals,
        coefficients=batch.coefficients,
        noise=batch.noise,
        inlier_mask=batch.inlier_mask,
        k=batch.k,
        seed=-1 if batch.seed is None else batch.seed,
    )


def load_batch_npz(path) -> SignalBatch:
    with np.load(path) as z:
        seed = int(z["seed"])
        return SignalBatch(
            z["signals"], z["coefficients"], z["noise"], z["inlier_mask"], int(z["k"]), None if seed < 0 else seed
        )


# ---------------------------------------------------------------------------
# config

def _floats(text: str):
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def model_from_config(cfg: Mapping[str, str], p: int) -> CoefficientModel:
    """Build a model from ``model.*`` keys of a flat key-value mapping.

    Keys: ``model.k``; ``model.dist`` (``signed_uniform`` or ``fixed_profile``);
    ``model.alpha_min`` and ``model.alpha_max`` for signed_uniform;
    ``model.profile`` (comma separated) for fixed_profile; ``model.noise``
    (``none`` or ``gaussian``) with ``model.sigma`` and ``model.noise_bound``.
    """
    try:
        k = int(cfg["model.k"])
        dist = cfg.get("model.dist", "signed_uniform").strip().lower()
        if dist == "signed_uniform":
            lo = float(cfg["model.alpha_min"])
            hi = float(cfg.get("model.alpha_max", lo))
            law = SignedUniform(lo, hi)
        elif dist == "fixed_profile":
            law = FixedProfile(_floats(cfg["model.profile"]))
        else:
            raise ConfigError(f"unknown model.dist {dist!r}")
        noise_kind = cfg.get("model.noise", "none").strip().lower()
        if noise_kind == "none":
            noise = None
        elif noise_kind == "gaussian":
            noise = TruncatedGaussian(float(cfg["model.sigma"]), float(cfg["model.noise_bound"]))
        else:
            raise ConfigError(f"unknown model.noise {noise_kind!r}")
        return CoefficientModel(p, k, law, noise)
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc.args[0]}") from None
    except (InvalidParameterError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
