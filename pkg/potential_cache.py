#!/usr/bin/env python3
"""
Potential Cache for kstab
Memoises reference potentials and dual solvers keyed by polytope, grid and parameters
"""

import functools
import hashlib
import json
import logging
from collections import OrderedDict
from threading import Lock
from typing import Any, Dict

import numpy as np

logger = logging.getLogger(__name__)

_MISSING = object()


def fingerprint(arg: Any) -> str:
    """Stable text for a cache key: arrays by shape and bytes, containers as sorted JSON, the rest by repr"""
    if isinstance(arg, np.ndarray):
        return f"{arg.dtype}{arg.shape}:{hashlib.sha1(np.ascontiguousarray(arg).tobytes()).hexdigest()}"
    if isinstance(arg, (dict, list, tuple)):
        return json.dumps(arg, sort_keys=True, default=repr)
    return repr(arg)


class PotentialCache:
    """In-process least-recently-stored cache; entries are pure functions of their key and never expire"""

    def __init__(self, max_entries: int = 64):
        self.max_entries = max_entries
        self._entries: "OrderedDict[str, Any]" = OrderedDict()
        self._lock = Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def make_key(prefix: str, *args, **kwargs) -> str:
        parts = [prefix, *(fingerprint(arg) for arg in args)]
        parts += [f"{name}={fingerprint(value)}" for name, value in sorted(kwargs.items())]
        return hashlib.sha1("|".join(parts).encode()).hexdigest()

    def lookup(self, key: str, default: Any = None) -> Any:
        with self._lock:
            if key in self._entries:
                self.hits += 1
                return self._entries[key]
            self.misses += 1
        return default

    def store(self, key: str, value: Any):
        with self._lock:
            self._entries[key] = value
            self._entries.move_to_end(key)
            while len(self._entries) > self.max_entries:
                self._entries.popitem(last=False)

    def clear(self):
        with self._lock:
            self._entries.clear()
            self.hits = self.misses = 0

    def stats(self) -> Dict[str, int]:
        return {'entries': len(self._entries), 'hits': self.hits, 'misses': self.misses}


_SHARED_CACHE = PotentialCache()


def get_cache() -> PotentialCache:
    return _SHARED_CACHE


def potential_cache(key_prefix: str = "potential"):
    """Decorator memoising a pure function of polytopes, grids, arrays and plain values"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            cache = get_cache()
            key = PotentialCache.make_key(key_prefix, func.__name__, *args, **kwargs)
            result = cache.lookup(key, _MISSING)
            if result is not _MISSING:
                logger.debug(f"Cache hit for {func.__name__}")
                return result
            result = func(*args, **kwargs)
            cache.store(key, result)
            return result

        wrapper.cache_clear = get_cache().clear
        return wrapper
    return decorator
