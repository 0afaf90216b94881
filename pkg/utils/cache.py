"""
Coarse Guidance Toolkit - Caching Utilities
Bounded, thread-safe in-memory memoization for expensive deterministic results.
"""

import hashlib
import json
import threading
from enum import Enum
from collections import OrderedDict
from functools import wraps
from typing import Any, Callable, Optional

import numpy as np
from pydantic import BaseModel

from config.settings import settings


class SimpleCache:
    """Least-recently-used cache with a fixed capacity"""

    def __init__(self, max_size: Optional[int] = None):
        self._cache: "OrderedDict[str, Any]" = OrderedDict()
        self._lock = threading.Lock()
        self.max_size = settings.cache_size if max_size is None else max_size
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> Optional[Any]:
        """Get value from cache"""
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                self.hits += 1
                return self._cache[key]
            self.misses += 1
            return None

    def set(self, key: str, value: Any) -> None:
        """Store value, evicting the least recently used entry when full"""
        if self.max_size == 0:
            return
        with self._lock:
            self._cache[key] = value
            self._cache.move_to_end(key)
            while len(self._cache) > self.max_size:
                self._cache.popitem(last=False)

    def delete(self, key: str) -> bool:
        """Delete key from cache"""
        with self._lock:
            if key in self._cache:
                del self._cache[key]
                return True
            return False

    def clear(self) -> None:
        """Clear all cache entries"""
        with self._lock:
            self._cache.clear()
            self.hits = 0
            self.misses = 0

    def size(self) -> int:
        """Get number of cached items"""
        with self._lock:
            return len(self._cache)


# Global cache instance
cache = SimpleCache()


def _canonical(value: Any) -> Any:
    """JSON-friendly canonical form of cache-key arguments"""
    if isinstance(value, BaseModel):
        return {'__model__': type(value).__name__, **value.model_dump(mode='json')}
    if isinstance(value, np.ndarray):
        return {'__ndarray__': value.shape, 'data': value.tolist()}
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_canonical(item) for item in value]
    if isinstance(value, dict):
        return {str(key): _canonical(item) for key, item in value.items()}
    if isinstance(value, Enum):
        return value.value
    return value


def cache_key(func_name: str, args: tuple, kwargs: dict, key_prefix: str = "") -> str:
    """Hash of the canonical JSON of a call"""
    key_data = {
        'func': func_name,
        'args': _canonical(args),
        'kwargs': _canonical(kwargs)
    }
    key_str = json.dumps(key_data, sort_keys=True, default=str)
    return f"{key_prefix}{hashlib.md5(key_str.encode()).hexdigest()}"


def cached(key_prefix: str = ""):
    """
    Decorator for memoizing deterministic function results

    Args:
        key_prefix: Prefix for cache keys
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            key = cache_key(func.__name__, args, kwargs, key_prefix)

            result = cache.get(key)
            if result is not None:
                return result

            result = func(*args, **kwargs)
            cache.set(key, result)
            return result

        wrapper.cache_clear = lambda: cache.clear()
        wrapper.cache_info = lambda: get_cache_stats()

        return wrapper
    return decorator


def get_cache_stats() -> dict:
    """Get cache statistics"""
    return {
        'size': cache.size(),
        'max_size': cache.max_size,
        'hits': cache.hits,
        'misses': cache.misses
    }
