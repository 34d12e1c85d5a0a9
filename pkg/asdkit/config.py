"""
Experiment configuration.

A configuration is one YAML (or JSON) document with a fixed set of
sections. Missing keys take the defaults below; keys that are not part of
the schema are rejected with their dotted path.
"""

import copy
import json
import logging
import os

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = "ASDKIT_THREADS"

SCHEMA = {
    "seed": 0,
    "description": "",
    "graph": {
        "generator": "regular",
        "params": {},
        # statistics JSON used instead of the generator for ode/stationary/basins/bounds
        "statistics": None,
        "write_ids": False,
    },
    "dynamics": {
        "kernel": "erg",
        "params": {},
    },
    "initial": {
        # {state: p} for every label, or {label: {state: p}}
        "fractions": None,
        "exact": False,
        "file": None,
    },
    "sim": {
        "horizon": 10.0,
        "dt": 0.01,
        "runs": 1,
        "gamma": 1.0,
        "granularity": "per-class",
        "fresh_graph": False,
        "fresh_seeds": True,
        "threads": None,
    },
    "ode": {
        "h": 0.01,
        "horizon": 10.0,
        "phi_mode": "auto",
        "mc_samples": 100000,
        "budget": 200000,
        "degree_threshold": None,
        "truncation": 1 - 1e-8,
        "label_independent": False,
    },
    "stationary": {
        "resolution": 20,
        "tol": 1e-8,
        "alpha": 0.5,
        "max_iter": 500,
        "newton_iter": 50,
        "dedup": 1e-6,
        "eig_tol": 1e-8,
        # cap on per-label seed combinations for multi-label systems
        "max_seeds": 2000,
    },
    "basins": {
        "resolution": 101,
        "horizon": 50.0,
        "face": [0, 1],
        "tol": 1e-4,
    },
    "bounds": {
        "kinds": ["topological"],
        "t": 1.0,
        "n": None,
        "topological": {
            "trials": 10000,
            "form": "general",
            "conservative": True,
            "confidence": 0.95,
        },
        "concentration": {
            "eta": 0.05,
            "epsilon": 1.0,
            "s": 3,
            "x": None,
            "trials": 1000,
        },
        "ode_distance": {
            "limit_statistics": None,
            "zeta_gap": 0.0,
            "y_gap": 0.0,
            "L": None,
            "M": None,
            "delta": 0.01,
            "m": 100,
            "samples": 200,
        },
        "gw": {
            "mean": 2.0,
            "offspring": None,
            "depth": 6,
            "moment": 1,
            "trials": 10000,
        },
        "depth": {
            "max_depth": 10,
        },
    },
    "couple": {
        "n_values": [1000, 10000],
        "t": 1.0,
        "traces": 1000,
        "with_bound": True,
        "tail_trials": 10000,
        "confidence": 0.95,
    },
    "compare": {
        "first": None,
        "second": None,
        "assert_tol": None,
    },
    "output": {
        "dir": "out",
        "trajectories": True,
        "every": 1,
        # sampled time-t trees dumped as tree_<i>.txt by `bounds topological`
        "trees": 0,
    },
}

# Mappings whose keys depend on another setting; checked separately.
FREE_FORM = {"graph.params", "dynamics.params", "initial.fractions", "bounds.gw.offspring"}

GENERATOR_PARAMS = {
    "regular": {"k", "n"},
    "labeled_regular": {"k", "n", "label_probs", "labels"},
    "cbm": {"community_sizes", "edge_means", "n", "labels"},
    "configuration": {"statistics", "n"},
    "powerlaw": {"beta", "k_max", "delta", "zeta", "n"},
    "edge_list": {"path", "label_map", "rewire"},
}

KERNEL_PARAMS = {
    "tltm": {"a_plus", "a_minus"},
    "brca": {"coordinating"},
    "erg": {"b", "c"},
    "table": {"table"},
}

# Keys a generator or kernel cannot do without.
GENERATOR_REQUIRED = {
    "regular": ("k", "n"),
    "labeled_regular": ("k", "n", "label_probs"),
    "cbm": ("community_sizes", "edge_means"),
    "configuration": ("statistics", "n"),
    "powerlaw": ("beta", "k_max", "n"),
    "edge_list": ("path",),
}

KERNEL_REQUIRED = {
    "tltm": (),
    "brca": (),
    "erg": (),
    "table": ("table",),
}

BOUND_KINDS = ("topological", "concentration", "ode_distance", "gw", "depth")


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _check_type(path, default, value):
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{path}' must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}' must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"'{path}' must be a list, got {value!r}")
        return list(value)
    return value


def _merge(schema, doc, path=""):
    if not isinstance(doc, dict):
        raise ConfigError(f"'{path or 'config'}' must be a mapping, got {type(doc).__name__}")
    for key in doc:
        if key not in schema:
            raise ConfigError(f"unknown key '{_join(path, key)}'")
    out = {}
    for key, default in schema.items():
        dotted = _join(path, key)
        if key not in doc:
            out[key] = copy.deepcopy(default)
        elif dotted in FREE_FORM:
            value = doc[key]
            if value is not None and not isinstance(value, dict):
                raise ConfigError(f"'{dotted}' must be a mapping")
            out[key] = copy.deepcopy(value) if value is not None else copy.deepcopy(default)
        elif isinstance(default, dict):
            out[key] = _merge(default, doc[key] if doc[key] is not None else {}, dotted)
        else:
            out[key] = _check_type(dotted, default, doc[key])
    return out


def _check_choices(cfg):
    gen = cfg["graph"]["generator"]
    if gen not in GENERATOR_PARAMS:
        raise ConfigError(f"'graph.generator' must be one of {sorted(GENERATOR_PARAMS)}, got {gen!r}")
    for key in cfg["graph"]["params"]:
        if key not in GENERATOR_PARAMS[gen]:
            raise ConfigError(f"unknown key 'graph.params.{key}' for generator {gen!r}")
    kernel = cfg["dynamics"]["kernel"]
    if kernel not in KERNEL_PARAMS:
        raise ConfigError(f"'dynamics.kernel' must be one of {sorted(KERNEL_PARAMS)}, got {kernel!r}")
    for key in cfg["dynamics"]["params"]:
        if key not in KERNEL_PARAMS[kernel]:
            raise ConfigError(f"unknown key 'dynamics.params.{key}' for kernel {kernel!r}")
    kinds = cfg["bounds"]["kinds"]
    for kind in kinds:
        if kind not in BOUND_KINDS:
            raise ConfigError(f"'bounds.kinds' entries must be in {BOUND_KINDS}, got {kind!r}")
    if len(cfg["basins"]["face"]) != 2:
        raise ConfigError("'basins.face' needs exactly two state indices")


def validate_config(doc):
    """Merge a raw document with the defaults and reject unknown keys."""
    cfg = _merge(SCHEMA, doc if doc is not None else {})
    _check_choices(cfg)
    return cfg


def parse_document(text, path="<config>"):
    """YAML or JSON text to a dict; syntax errors carry line and column."""
    if str(path).endswith(".json"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e.msg}", e.lineno, e.colno) from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            raise ConfigError(f"invalid YAML in {path}: {getattr(e, 'problem', e)}",
                              mark.line + 1, mark.column + 1) from None
        raise ConfigError(f"invalid YAML in {path}: {e}") from None


def get_nested_value(data, key_path):
    """Navigate nested dicts with a dotted key path."""
    value = data
    for k in key_path.split('.'):
        if not isinstance(value, dict) or k not in value:
            raise ConfigError(f"key '{key_path}' not found")
        value = value[k]
    return value


def check_required(cfg, section):
    """
    Raise ConfigError for the first required parameter missing from
    'graph.params' or 'dynamics.params'.
    """
    choice_key, table = {"graph": ("generator", GENERATOR_REQUIRED),
                         "dynamics": ("kernel", KERNEL_REQUIRED)}[section]
    choice = cfg[section][choice_key]
    for key in table.get(choice, ()):
        path = f"{section}.params.{key}"
        try:
            value = get_nested_value(cfg, path)
        except ConfigError:
            value = None
        if value is None:
            raise ConfigError(f"missing key '{path}' for {choice_key} {choice!r}")


def set_nested_value(data, key_path, value):
    keys = key_path.split('.')
    node = data
    for k in keys[:-1]:
        child = node.get(k)
        if child is None:
            child = node[k] = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"cannot set '{key_path}': '{k}' is not a section")
        node = child
    node[keys[-1]] = value


def parse_override(text):
    """'section.key=value' -> (dotted key, value parsed as a YAML scalar)."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError:
        raise ConfigError(f"cannot parse override value {raw!r}") from None
    return key.strip(), value


def load_config(path=None, overrides=()):
    """
    Load, override and validate a configuration.

    Args:
        path: YAML or JSON file; None for the defaults.
        overrides: Iterable of 'section.key=value' strings.

    Returns:
        The fully resolved configuration dict.
    """
    doc = {}
    if path is not None:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        doc = parse_document(text, path)
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"top level of {path} must be a mapping")
    for item in overrides:
        key, value = parse_override(item)
        set_nested_value(doc, key, value)
        logger.debug("Override %s = %r", key, value)
    return validate_config(doc)


def resolve_threads(flag, cfg):
    """--threads, then $ASDKIT_THREADS, then sim.threads, then 1."""
    if flag is not None:
        value, source = flag, "--threads"
    elif os.environ.get(THREADS_ENV):
        raw = os.environ[THREADS_ENV]
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        source = THREADS_ENV
    elif cfg["sim"]["threads"] is not None:
        value, source = cfg["sim"]["threads"], "sim.threads"
    else:
        return 1
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"thread count from {source} must be a positive integer, got {value!r}")
    return value
