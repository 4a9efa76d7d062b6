import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dictident.dictionary import (
    DictionaryProfile,
    check_dictionary,
    coherence_transfer_bound,
    cumulative_coherence,
    cumulative_coherence_bruteforce,
    load_dictionary,
    normalize_columns,
    onb_pair,
    orthonormal,
    plain_coherence,
    profile,
    rip_constants,
    spectral_profile,
    spherical,
    welch_bound,
)
from dictident.errors import BudgetExceededError, InvalidDictionaryError, InvalidParameterError


def test_check_dictionary_rejects_non_unit():
    with pytest.raises(InvalidDictionaryError):
        check_dictionary(np.ones((2, 2)))
    with pytest.raises(InvalidDictionaryError):
        check_dictionary(np.ones(3))
    D = orthonormal(3)
    D[:, 1] *= 1 + 1e-11
    with pytest.raises(InvalidDictionaryError):
        check_dictionary(D)


def test_plain_coherence_examples():
    assert plain_coherence(orthonormal(5)) == 0.0
    D = np.array([[1.0, 1 / math.sqrt(2)], [0.0, 1 / math.sqrt(2)]])
    assert plain_coherence(D) == pytest.approx(1 / math.sqrt(2))
    assert plain_coherence(orthonormal(1)) == 0.0
    D = spherical(20, 40, 3)
    brute = max(abs(D[:, i] @ D[:, j]) for i in range(40) for j in range(40) if i != j)
    assert plain_coherence(D) == pytest.approx(brute, abs=1e-15)


def test_cumulative_coherence_orthonormal():
    for k in range(0, 6):
        assert cumulative_coherence(orthonormal(6), k) == 0.0


def test_cumulative_coherence_bad_k():
    with pytest.raises(InvalidParameterError):
        cumulative_coherence(orthonormal(4), 4)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 8), p=st.integers(2, 12), data=st.data())
def test_cumulative_coherence_matches_enumeration(seed, m, p, data):
    k = data.draw(st.integers(1, min(4, p - 1)))
    D = spherical(m, p, seed)
    assert cumulative_coherence(D, k) == pytest.approx(cumulative_coherence_bruteforce(D, k), abs=1e-12)
    mu1 = plain_coherence(D)
    assert mu1 == pytest.approx(cumulative_coherence(D, 1), abs=1e-15)
    assert mu1 - 1e-15 <= cumulative_coherence(D, k) <= k * mu1 + 1e-12


def test_onb_pair_coherence_estimate():
    D = onb_pair(32)
    mu = plain_coherence(D)
    # DCT-II entries are bounded by sqrt(2/m), the smallest possible value being 1/sqrt(m)
    assert 1 / math.sqrt(32) <= mu <= math.sqrt(2 / 32)
    for k in (1, 2, 3, 4):
        assert cumulative_coherence(D, k) <= k * mu + 1e-12
    H = onb_pair(16, "hadamard")
    assert plain_coherence(H) == pytest.approx(0.25)
    with pytest.raises(InvalidParameterError):
        onb_pair(8, "wavelet")


def test_rip_orthonormal():
    assert rip_constants(orthonormal(5), 3) == (0.0, 0.0, True)


def test_rip_matches_eigen_scan():
    D = spherical(6, 10, 5)
    lo, hi, exact = rip_constants(D, 3)
    assert exact
    eig = [np.linalg.eigvalsh(D[:, J].T @ D[:, J]) for J in itertools.combinations(range(10), 3)]
    assert len(eig) == 120
    assert lo == pytest.approx(1 - min(e[0] for e in eig), abs=1e-12)
    assert hi == pytest.approx(max(e[-1] for e in eig) - 1, abs=1e-12)


def test_rip_budget_and_bound_mode():
    D = spherical(6, 10, 5)
    with pytest.raises(BudgetExceededError):
        rip_constants(D, 3, budget=100)
    lo, hi, exact = rip_constants(D, 3, "coherence_bound")
    assert not exact and lo == hi == pytest.approx(cumulative_coherence(D, 2))
    with pytest.raises(InvalidParameterError):
        rip_constants(D, 3, "guess")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(3, 9))
def test_rip_monotone_in_k(seed, p):
    D = spherical(4, p, seed)
    prev = (0.0, 0.0)
    for k in range(1, min(p, 4) + 1):
        lo, hi, _ = rip_constants(D, k)
        assert lo >= prev[0] - 1e-12 and hi >= prev[1] - 1e-12
        prev = (lo, hi)


def test_spectral_profile_examples():
    assert spectral_profile(orthonormal(7)) == pytest.approx((1.0, 0.0, 1.0))
    op, _, frame = spectral_profile(onb_pair(16))
    assert op == pytest.approx(math.sqrt(2)) and frame == pytest.approx(2.0)
    # tall dictionaries are not frames
    assert spectral_profile(np.eye(4)[:, :2])[2] == 0.0


def test_welch_bound_holds():
    for seed in range(5):
        D = spherical(8, 20, seed)
        assert spectral_profile(D)[1] >= welch_bound(8, 20)


def test_frame_bound_positive_iff_full_rank():
    D = spherical(5, 8, 1)
    assert spectral_profile(D)[2] > 0
    D2 = normalize_columns(np.vstack([spherical(4, 8, 2), np.zeros((1, 8))]))
    assert spectral_profile(D2)[2] == 0.0


def test_coherence_transfer_bound_arithmetic():
    assert coherence_transfer_bound(0.3, 0.1, 3, 0.0) == 0.3
    assert coherence_transfer_bound(0.2, 0.15, 4, 0.01) == pytest.approx(0.243)
    with pytest.raises(InvalidParameterError):
        coherence_transfer_bound(0.1, 0.1, 1, -1.0)


def test_profile_round_trip():
    prof = profile(onb_pair(8), 2)
    assert prof.mu_1 <= prof.mu_k <= 2 * prof.mu_1
    assert prof.delta_exact and prof.delta_lower_k <= cumulative_coherence(onb_pair(8), 1) + 1e-12
    assert DictionaryProfile.from_json(prof.to_json()) == prof


def test_load_dictionary(tmp_path):
    D = spherical(4, 6, 0)
    np.save(tmp_path / "d.npy", D)
    np.savetxt(tmp_path / "d.csv", D, delimiter=",")
    np.testing.assert_array_equal(load_dictionary(tmp_path / "d.npy"), D)
    np.testing.assert_allclose(load_dictionary(tmp_path / "d.csv"), D, atol=1e-15)
