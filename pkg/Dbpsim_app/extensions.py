from threading import Lock

from cachetools import LRUCache

# Shared Monte Carlo expectation cache: many readers, one writer at a time
expectation_cache = LRUCache(maxsize=32)
expectation_lock = Lock()

# On-disk companion, set by init_cache when a cache directory is configured
disk_cache = None


def init_cache(cache_dir=None, expiry_hours=24 * 7):
    """Attach (or detach, with None) the on-disk expectation cache."""
    global disk_cache
    if cache_dir is None:
        disk_cache = None
        return None
    from services.expectation_cache import ExpectationCache

    disk_cache = ExpectationCache(cache_dir, expiry_hours=expiry_hours)
    return disk_cache


def clear_cache():
    with expectation_lock:
        expectation_cache.clear()
