"""Angle/direction parametrization of pairs of dictionaries with unit atoms.

Any two dictionaries with unit atoms are related atom by atom by a rotation in
the plane spanned by the two atoms::

    D2 = D1 diag(cos theta) + W diag(sin theta)

with ``theta`` in ``[0, pi]`` and each column of ``W`` a unit vector orthogonal
to the matching atom of ``D1``. Since ``||d2 - d1|| = 2 sin(theta / 2)``, the
Frobenius distance is an increasing function of each angle, which is what
:func:`sample_sphere` uses to land exactly on a sphere around a reference
dictionary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .dictionary import check_dictionary
from .errors import InfeasibleRadiusError, InvalidDictionaryError

PARALLEL_TOL = 1e-14


@dataclass(frozen=True)
class SphereDecomposition:
    theta: np.ndarray
    W: np.ndarray


def _orthogonal_unit(d):
    """First canonical basis vector not parallel to ``d``, made orthogonal to it."""
    m = d.shape[0]
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        w = e - d[i] * d
        nw = np.linalg.norm(w)
        if nw > 1e-8:
            return w / nw
    raise InvalidDictionaryError("no orthogonal direction exists in dimension 1")


def decompose(D1, D2) -> SphereDecomposition:
    """Angles and orthogonal directions taking the atoms of ``D1`` to those of ``D2``.

    When an angle is 0 or pi the direction is not determined by the pair; the
    first canonical basis vector that is not parallel to the atom is projected
    and normalized, which keeps the output reproducible.
    """
    D1 = check_dictionary(D1)
    D2 = check_dictionary(D2)
    if D1.shape != D2.shape:
        raise InvalidDictionaryError("dictionaries must have the same shape")
    c = np.einsum("ij,ij->j", D1, D2)
    V = D2 - D1 * c
    s = np.linalg.norm(V, axis=0)
    theta = np.arctan2(s, c)
    W = np.empty_like(D1)
    for j in range(D1.shape[1]):
        if s[j] > PARALLEL_TOL:
            W[:, j] = V[:, j] / s[j]
        else:
            W[:, j] = _orthogonal_unit(D1[:, j])
            theta[j] = 0.0 if c[j] > 0 else math.pi
    return SphereDecomposition(theta, W)


def reconstruct(D1, dec: SphereDecomposition) -> np.ndarray:
    """Inverse of :func:`decompose`."""
    D1 = np.asarray(D1, dtype=float)
    return D1 * np.cos(dec.theta) + dec.W * np.sin(dec.theta)


def chord_lengths(theta) -> np.ndarray:
    """Per-atom distances ``2 sin(theta/2)``."""
    return 2.0 * np.sin(0.5 * np.asarray(theta))


def random_orthogonal_directions(D0, rng) -> np.ndarray:
    """Random unit columns, column j orthogonal to atom j of ``D0``."""
    m, p = D0.shape
    G = np.empty((m, p))
    todo = np.arange(p)
    while todo.size:
        g = rng.standard_normal((m, todo.size))
        D = D0[:, todo]
        g -= D * np.einsum("ij,ij->j", D, g)
        n = np.linalg.norm(g, axis=0)
        ok = n > 1e-8
        G[:, todo[ok]] = g[:, ok] / n[ok]
        todo = todo[~ok]  # draws (nearly) parallel to the atom are redrawn
    return G


def sample_sphere(D0, r: float, rng=None, *, return_decomposition: bool = False):
    """Dictionary with unit atoms at Frobenius distance exactly ``r`` from ``D0``.

    A random orthogonal direction per atom and a random nonnegative unit vector
    ``u`` are drawn; the angles are ``min(t * u, pi)`` with the scalar ``t``
    found by root bracketing on the (nondecreasing) distance. The result is
    not uniformly distributed on the sphere.
    """
    D0 = check_dictionary(D0)
    rng = np.random.default_rng(rng)
    m, p = D0.shape
    r_max = 2.0 * math.sqrt(p)
    if not 0 <= r <= r_max + 1e-12:
        raise InfeasibleRadiusError(f"radius {r} outside [0, 2 sqrt(p)] = [0, {r_max}]")
    if m < 2:
        raise InfeasibleRadiusError("atoms in dimension 1 cannot rotate")
    W = random_orthogonal_directions(D0, rng)
    if r >= r_max:
        dec = SphereDecomposition(np.full(p, math.pi), W)
    else:
        u = np.abs(rng.standard_normal(p))
        u /= np.linalg.norm(u)

        def gap(t):
            return np.linalg.norm(chord_lengths(np.minimum(t * u, math.pi))) - r

        t_hi = math.pi / u.min()
        t = brentq(gap, 0.0, t_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200) if r > 0 else 0.0
        dec = SphereDecomposition(np.minimum(t * u, math.pi), W)
    D = reconstruct(D0, dec)
    return (D, dec) if return_decomposition else D
