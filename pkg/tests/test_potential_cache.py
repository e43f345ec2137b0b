import numpy as np

from potential_cache import PotentialCache, fingerprint, get_cache, potential_cache
from potentials import guillemin_reference


def test_hits_and_misses():
    cache = PotentialCache()
    key = PotentialCache.make_key("dual", np.arange(3.0), scale=2)
    assert cache.lookup(key) is None
    cache.store(key, "value")
    assert cache.lookup(key) == "value"
    assert cache.stats() == {'entries': 1, 'hits': 1, 'misses': 1}


def test_keys_follow_array_contents():
    assert fingerprint(np.zeros(3)) == fingerprint(np.zeros(3))
    assert fingerprint(np.zeros(3)) != fingerprint(np.ones(3))
    assert fingerprint(np.zeros(3)) != fingerprint(np.zeros(3, dtype=np.float32))
    assert PotentialCache.make_key("p", a=1, b=2) == PotentialCache.make_key("p", b=2, a=1)


def test_oldest_entries_are_dropped_first():
    cache = PotentialCache(max_entries=3)
    for i in range(5):
        cache.store(f"k{i}", i)
    assert cache.stats()['entries'] == 3
    assert cache.lookup("k0") is None
    assert cache.lookup("k4") == 4


def test_decorator_memoises_pure_calls():
    calls = []

    @potential_cache("square")
    def square(values):
        calls.append(1)
        return values ** 2

    square.cache_clear()
    first = square(np.arange(4.0))
    assert len(calls) == 1
    np.testing.assert_array_equal(first, [0.0, 1.0, 4.0, 9.0])
    assert square(np.arange(4.0)) is first
    assert len(calls) == 1
    square(np.arange(5.0))
    assert len(calls) == 2


def test_miss_returns_the_given_default():
    cache = PotentialCache()
    marker = object()
    assert cache.lookup("absent", marker) is marker
    cache.store("none", None)
    assert cache.lookup("none", marker) is None


def test_reference_potential_is_shared(p1, grid_1d):
    get_cache().clear()
    first = guillemin_reference(p1, grid_1d)
    assert first is not None and first.grid == grid_1d
    assert guillemin_reference(p1, grid_1d) is first
    assert get_cache().stats()['hits'] >= 1
