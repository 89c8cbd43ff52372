import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwid.rng import SplitMix64

MASK = (1 << 64) - 1


def scalar_splitmix(seed, n):
    # the canonical scalar algorithm, written with Python ints
    state, out = seed & MASK, []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def test_known_first_output():
    assert int(SplitMix64(0).next_u64(1)[0]) == 0xE220A8397B1DCDAF


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(1, 20), st.integers(1, 20))
def test_matches_scalar_reference_across_calls(seed, a, b):
    r = SplitMix64(seed)
    got = r.next_u64(a).tolist() + r.next_u64(b).tolist()
    assert got == scalar_splitmix(seed, a + b)


def test_uniform_range_and_resolution():
    u = SplitMix64(3).uniform(10_000)
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01
    expected = np.array([v >> 11 for v in scalar_splitmix(3, 4)], np.float64) / 2**53
    np.testing.assert_array_equal(SplitMix64(3).uniform(4), expected)


def test_normal_moments():
    z = SplitMix64(1).normal(20_000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03


def test_permutation_and_integers():
    p = SplitMix64(9).permutation(50)
    assert sorted(p.tolist()) == list(range(50))
    np.testing.assert_array_equal(p, SplitMix64(9).permutation(50))
    k = SplitMix64(2).integers(-3, 4, 1000)
    assert k.min() == -3 and k.max() == 3


def test_spawn_is_independent_and_stable():
    a, b = SplitMix64(5).spawn(1), SplitMix64(5).spawn(2)
    assert a.next_u64(3).tolist() != b.next_u64(3).tolist()
    assert SplitMix64(5).spawn(1).state == SplitMix64(5).spawn(1).state


@pytest.mark.parametrize("seed", [-1, 2**64 + 5])
def test_seed_wraps_modulo_2_64(seed):
    assert SplitMix64(seed).state == seed % 2**64
