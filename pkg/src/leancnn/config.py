"""Layered configuration: flag > environment > file > default.

File grammar (flat key-value text):

    # full-line comments start with '#'
    key = value          # one assignment per line, '=' required
    lrs = 0.001,0.0005   # list values are comma separated, no spaces needed

Blank lines are skipped.  Inline comments are not supported (values may
legitimately contain '#').  Unknown keys are errors, not warnings, so typos
fail loudly.  Environment overrides use the key upper-cased with the
LEANCNN_ prefix (batch_size -> LEANCNN_BATCH_SIZE).

resolve() returns the merged values plus a per-key provenance map recording
which layer supplied each value; the CLI echoes both into the run manifest.
"""

import os
from dataclasses import dataclass

from .errors import ConfigError

ENV_PREFIX = "LEANCNN_"

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


@dataclass(frozen=True)
class Key:
    name: str
    kind: str            # int | float | str | bool | ints | floats | strs
    default: object
    help: str
    choices: tuple = None


SCHEMA = {k.name: k for k in [
    Key("model", "str", "btbcnn", "architecture kind",
        choices=("btbcnn", "btmcnn")),
    Key("data", "str", None, "dataset root directory"),
    Key("input_size", "int", 224, "square image side after resize"),
    Key("lr", "float", 0.0005, "Adam learning rate"),
    Key("lrs", "floats", (0.001, 0.0005, 0.0001, 0.00005),
        "learning rates for sweep"),
    Key("epochs", "int", 50, "training epochs"),
    Key("batch_size", "int", 32, "training/eval batch size"),
    Key("seed", "int", 42, "master seed (init, shuffles, splits)"),
    Key("loss", "str", "auto", "loss kind", choices=("auto", "bce", "ce")),
    Key("eval_every", "int", 1, "epochs between test evaluations, 0 = never"),
    Key("split", "str", "auto", "train/test split source",
        choices=("auto", "folders", "ratio")),
    Key("train_ratio", "float", 0.8, "train fraction for ratio splits"),
    Key("shots", "ints", (0, 5, 10, 15, 20, 40, 80),
        "examples per class for few-shot runs"),
    Key("sampler_seed", "int", None,
        "few-shot subset seed (default: seed + 1)"),
    Key("binarize", "str", None,
        "comma list of positive classes, or 'auto'"),
    Key("threads", "int", None,
        "BLAS thread cap (default: 1 when deterministic, else all cores)"),
    Key("deterministic", "bool", True,
        "single-threaded bit-reproducible mode"),
    Key("warmup", "int", 2, "bench warmup iterations"),
    Key("measured", "int", 10, "bench measured iterations"),
    Key("bench_batch_size", "int", 128, "bench batch size"),
]}


def parse_value(key, raw):
    """Parse one raw string according to the key's declared type."""
    k = SCHEMA[key]
    raw = raw.strip()

    def one(kind, s):
        s = s.strip()
        try:
            if kind == "int":
                return int(s)
            if kind == "float":
                return float(s)
            if kind == "bool":
                ls = s.lower()
                if ls in _TRUE:
                    return True
                if ls in _FALSE:
                    return False
                raise ValueError(s)
            return s
        except ValueError:
            raise ConfigError(
                f"config key {key!r} expects {kind}, got {s!r}") from None

    if k.kind in ("ints", "floats", "strs"):
        if raw == "":
            return ()
        elem = k.kind[:-1]
        return tuple(one(elem, part) for part in raw.split(","))
    value = one(k.kind, raw)
    if k.choices is not None and value not in k.choices:
        raise ConfigError(
            f"config key {key!r} must be one of {k.choices}, got {value!r}")
    return value


def load_file(path):
    """Parse a flat key-value config file into {key: typed value}."""
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    values = {}
    for ln, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"{path}:{ln}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{ln}: duplicate config key {key!r}")
        values[key] = parse_value(key, raw)
    return values


def env_overrides(environ=None):
    """Collect LEANCNN_* variables that name schema keys."""
    if environ is None:
        environ = os.environ
    values = {}
    for key in SCHEMA:
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            values[key] = parse_value(key, raw)
    return values

# LEANCNN_BACKEND is read by the backend module, not this schema
_BACKEND_ENV = ENV_PREFIX + "BACKEND"


def resolve(flags=None, file_path=None, environ=None):
    """Merge the four layers; returns (values, provenance).

    flags: mapping of schema key -> value already typed (None = not given).
    provenance[key] is one of "flag", "env", "file", "default".
    """
    file_values = load_file(file_path) if file_path else {}
    env_values = env_overrides(environ)
    flags = flags or {}
    values, provenance = {}, {}
    for key, spec in SCHEMA.items():
        if key in flags and flags[key] is not None:
            values[key], provenance[key] = flags[key], "flag"
        elif key in env_values:
            values[key], provenance[key] = env_values[key], "env"
        elif key in file_values:
            values[key], provenance[key] = file_values[key], "file"
        else:
            values[key], provenance[key] = spec.default, "default"
    return values, provenance
