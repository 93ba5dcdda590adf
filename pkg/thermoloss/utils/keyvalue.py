"""
Plain-text key-value documents.

Configuration, model, network and constraint files all share the dotenv
syntax (``key=value`` per line, ``#`` comments), so they are read with
python-dotenv and written back in the same shape.
"""
import logging
import os

import numpy as np
from dotenv import dotenv_values

from thermoloss.utils.errors import ConfigError

logger = logging.getLogger(__name__)


def format_float(value):
    """Format a float with 17 significant digits (bit-faithful round trip)."""
    return format(float(value), ".17g")


def format_floats(values):
    """Comma-joined, bit-faithful rendering of a flat sequence of floats."""
    return ",".join(format_float(v) for v in np.ravel(values))


def read_key_values(path, error_cls=ConfigError):
    """
    Read a key-value document.

    Args:
        path (str): Document path
        error_cls (type): Exception raised when the file is unusable

    Returns:
        dict: Mapping of key to raw string value

    Raises:
        error_cls: If the file does not exist
        ConfigError: If a key has no value
    """
    if not os.path.isfile(path):
        logger.error(f"Key-value file not found: {path}")
        raise error_cls(f"file not found: {path}")

    values = dotenv_values(path, interpolate=False)
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"key '{key}' in {path} has no value", key=key)
    logger.debug(f"Read {len(values)} keys from {path}")
    return dict(values)


def write_key_values(path, items, header=None):
    """
    Write a key-value document.

    Args:
        path (str): Destination path
        items (Mapping[str, object]): Keys and values, written in order
        header (str, optional): Comment placed on top of the document
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    lines = []
    if header:
        lines.extend(f"# {line}" for line in header.splitlines())
    for key, value in items.items():
        text = str(value)
        if any(ch in text for ch in " #'\"") or text == "":
            text = '"' + text.replace('"', '\\"') + '"'
        lines.append(f"{key}={text}")

    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.debug(f"Wrote {len(items)} keys to {path}")


def parse_float(values, key):
    """Parse one float from a document value, naming the key on failure."""
    try:
        return float(values[key])
    except KeyError:
        raise ConfigError(f"missing key '{key}'", key=key) from None
    except ValueError:
        raise ConfigError(f"key '{key}' is not a number: {values[key]!r}", key=key) from None


def parse_float_list(values, key, expected=None):
    """
    Parse a comma-separated list of floats.

    Args:
        values (dict): Document values
        key (str): Key to parse
        expected (int, optional): Required number of entries

    Returns:
        numpy.ndarray: 1-D float array
    """
    if key not in values:
        raise ConfigError(f"missing key '{key}'", key=key)
    raw = values[key].strip()
    try:
        parsed = np.array([float(part) for part in raw.split(",")], dtype=float) if raw else np.zeros(0)
    except ValueError:
        raise ConfigError(f"key '{key}' holds a non-numeric entry: {raw!r}", key=key) from None
    if expected is not None and parsed.size != expected:
        raise ConfigError(f"key '{key}' has {parsed.size} entries, expected {expected}", key=key)
    return parsed


def parse_name_list(values, key):
    """Parse a comma-separated list of names."""
    if key not in values:
        raise ConfigError(f"missing key '{key}'", key=key)
    return tuple(part.strip() for part in values[key].split(",") if part.strip())
