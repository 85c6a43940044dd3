import hashlib
import json
import logging
import os
import sys

import numpy as np

LOG_ENV_VAR = "PHASEBAL_LOG"


def ensure_directory(path):
    if not os.path.exists(path):
        os.makedirs(path)


def configure_logging(level=None):
    """
    Install a single stderr handler on the package logger.

    The level comes from `level`, else from the PHASEBAL_LOG environment
    variable, else WARNING. Calling it twice does not stack handlers.
    """
    name = level or os.environ.get(LOG_ENV_VAR, "WARNING")
    numeric = logging.getLevelName(str(name).upper())
    if not isinstance(numeric, int):
        numeric = logging.WARNING

    logger = logging.getLogger("modules")
    logger.setLevel(numeric)
    if not any(getattr(h, "_phasebal", False) for h in logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        handler._phasebal = True
        logger.addHandler(handler)
    return logger


def get_config_float(config, key, default):
    """
    Safely fetch a float from a config mapping, falling back to default on empty/NaN.
    """
    val = config.get(key, default)
    if val is None or val == "":
        return default
    try:
        f = float(val)
        if np.isnan(f):
            return default
        return f
    except (TypeError, ValueError):
        return default


def get_config_int(config, key, default):
    f = get_config_float(config, key, None)
    if f is None:
        return default
    return int(round(f))


def sha256_checksum(*arrays_or_strings):
    """Hash numpy arrays (float64, C order) and strings into one hex digest."""
    digest = hashlib.sha256()
    for item in arrays_or_strings:
        if isinstance(item, str):
            digest.update(item.encode("utf-8"))
        else:
            arr = np.ascontiguousarray(np.asarray(item, dtype=np.float64))
            digest.update(arr.tobytes())
        digest.update(b"\x00")
    return digest.hexdigest()


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(data, path):
    """Write JSON with sorted keys so reruns produce identical bytes."""
    folder = os.path.dirname(path)
    if folder:
        ensure_directory(folder)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    return path


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
