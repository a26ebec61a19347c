import hashlib
import json
import logging
from datetime import datetime, timedelta
from functools import wraps
from pathlib import Path

import numpy as np

import extensions

logger = logging.getLogger(__name__)


class ExpectationCache:
    """Monte Carlo CSIT samples persisted as JSON, one file per parameter set.

    Entries older than ``expiry_hours`` are dropped on read.
    """

    def __init__(self, cache_dir="cache", expiry_hours=24):
        self.cache_dir = Path(cache_dir)
        self.expiry = timedelta(hours=expiry_hours)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, key):
        return self.cache_dir / f"{key}.json"

    def get(self, key):
        path = self.path_for(key)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
            stored_at = datetime.fromisoformat(entry["timestamp"])
            samples = entry["value"]
        except (OSError, ValueError, KeyError) as e:
            logger.warning(f"Ignoring unreadable cache entry {key}: {e}")
            return None
        if datetime.now() - stored_at > self.expiry:
            logger.debug(f"Cache entry {key} expired")
            path.unlink(missing_ok=True)
            return None
        return samples

    def set(self, key, value):
        entry = {"timestamp": datetime.now().isoformat(), "count": len(value), "value": value}
        try:
            self.path_for(key).write_text(json.dumps(entry), encoding="utf-8")
        except OSError as e:
            logger.warning(f"Could not write cache entry {key}: {e}")


def cache_key(name, *args, **kwargs):
    payload = json.dumps([name, args, kwargs], sort_keys=True, default=str)
    return f"{name}_{hashlib.sha256(payload.encode('utf-8')).hexdigest()[:24]}"


def cache_samples(func):
    """Memoize a function returning a float array, in memory and (if enabled) on disk."""

    @wraps(func)
    def wrapper(*args, **kwargs):
        key = cache_key(func.__name__, *args, **kwargs)

        with extensions.expectation_lock:
            cached = extensions.expectation_cache.get(key)
        if cached is not None:
            logger.debug(f"Expectation cache hit {key}")
            return cached

        disk = extensions.disk_cache
        stored = disk.get(key) if disk is not None else None
        if stored is not None:
            logger.debug(f"Expectation disk cache hit {key}")
            result = np.asarray(stored, dtype=float)
        else:
            result = np.asarray(func(*args, **kwargs), dtype=float)
            if disk is not None:
                disk.set(key, result.tolist())
        result.setflags(write=False)

        with extensions.expectation_lock:
            extensions.expectation_cache[key] = result
        return result

    return wrapper
