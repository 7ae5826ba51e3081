###############################################################################
# key=value configuration files
#
# One ``key = value`` pair per line, ``#`` starts a comment. Values are kept
# as strings; the typed getters below convert them and report the offending
# key on failure.
#

import os

from ._base import LOGGER, ConfigError


_TRUE_VALUES = ("1", "true", "yes", "on")
_FALSE_VALUES = ("0", "false", "no", "off")


def parse_config(text, source="<string>"):
    """Parse key=value text into an ordered dict of strings."""
    mapping = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("{}:{}: expected 'key = value', got {!r}"
                              .format(source, lineno, raw_line))
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("{}:{}: empty key".format(source, lineno))
        if key in mapping:
            raise ConfigError("{}:{}: duplicate key {!r}"
                              .format(source, lineno, key))
        mapping[key] = value.strip()
    return mapping


def load_config(path):
    """Read a key=value configuration file."""
    with open(path, "r") as f:
        text = f.read()
    mapping = parse_config(text, source=path)
    LOGGER.debug("Loaded {} configuration keys from {}"
                 .format(len(mapping), path))
    # Relative paths inside the file are resolved against its directory.
    mapping.setdefault("__dir__", os.path.dirname(os.path.abspath(path)))
    return mapping


def _convert(mapping, key, default, converter, type_name):
    if key not in mapping:
        return default
    value = mapping[key]
    try:
        return converter(value)
    except (TypeError, ValueError):
        raise ConfigError("Configuration key {!r} must be {}, got {!r}"
                          .format(key, type_name, value))


def get_str(mapping, key, default=None):
    return _convert(mapping, key, default, str, "a string")


def get_int(mapping, key, default=None):
    return _convert(mapping, key, default, int, "an integer")


def get_float(mapping, key, default=None):
    return _convert(mapping, key, default, float, "a number")


def _to_bool(value):
    value = value.lower()
    if value in _TRUE_VALUES:
        return True
    if value in _FALSE_VALUES:
        return False
    raise ValueError(value)


def get_bool(mapping, key, default=None):
    return _convert(mapping, key, default, _to_bool, "a boolean")


def _to_floats(value):
    return tuple(float(v) for v in value.replace(",", " ").split())


def get_floats(mapping, key, default=None):
    return _convert(mapping, key, default, _to_floats, "a list of numbers")


def check_known_keys(mapping, known_keys, known_prefixes=()):
    """Raise ConfigError listing the keys that nothing consumes."""
    unknown = sorted(
        key for key in mapping
        if not key.startswith("__") and key not in known_keys
        and not any(key.startswith(p) for p in known_prefixes))
    if unknown:
        raise ConfigError("Unknown configuration keys: {}"
                          .format(", ".join(unknown)))
