"""Default settings; a YAML file with the same sections overrides any subset."""
import copy

import yaml

from mvfusion.constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETA_MIN,
    DEFAULT_EPSILON_SQ,
    DEFAULT_FUSED_RANK,
    DEFAULT_LOCAL_RANK,
)
from mvfusion.errors import ConfigError

DataDefaults = {
    "agents": 3,
    "classes": 4,
    "ambient_dim": 16,
    # None splits rank evenly: ambient_dim // (2 * classes) per class
    "class_dims": None,
    # None gives every agent the full rank of S*
    "agent_ranks": None,
    "objects_per_class": 40,
    "view_dim": 32,
    "noise_sigma": 0.05,
    "beta_min": DEFAULT_BETA_MIN,
    "identity_views": False,
    "class_view_rank": None,
    "test_fraction": 0.25,
}

FusionDefaults = {
    "local_rank": DEFAULT_LOCAL_RANK,
    "fused_rank": DEFAULT_FUSED_RANK,
    # {class_id: {"local_rank": p, "fused_rank": P}}
    "class_overrides": {},
}

RateDefaults = {
    "epsilon_sq": DEFAULT_EPSILON_SQ,
}

RunDefaults = {
    "mode": "encoder",
    "rounds": 150,
    # None runs one local epoch per round
    "inner_steps": None,
    "batch_size": DEFAULT_BATCH_SIZE,
    "learning_rate": 1e-3,
    "weight_decay": 1e-5,
    "optimizer": "adam",
    # list of [round, lambda]; None switches from 1.0 to 100.0 after 2/3 of the rounds
    "lambda_schedule": None,
    # None uses ambient_dim (encoder mode) or view_dim (direct mode)
    "feature_dim": None,
    # one list for every agent, or one list per agent
    "hidden_layers": [64, 64],
    "activation": "relu",
    "feature_step": 0.05,
    "early_stop": True,
    "checkpoint_every": 1,
    "seed": 0,
    "threads": 1,
}

VerifyDefaults = {
    "instances": 200,
    "agents": 4,
    "ambient_dim": 32,
    "rank": 8,
    "agent_rank": 4,
    "noise_grid": [1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
    "trials": 50,
}

Sections = {
    "data": DataDefaults,
    "fusion": FusionDefaults,
    "rate": RateDefaults,
    "run": RunDefaults,
    "verify": VerifyDefaults,
}


def default_config():
    return {name: copy.deepcopy(defaults) for name, defaults in Sections.items()}


def merge_config(base, overrides):
    """Returns base updated section by section with overrides; rejects unknown keys."""
    merged = copy.deepcopy(base)
    for section, values in (overrides or {}).items():
        if section not in Sections:
            raise ConfigError(
                "unknown config section '{}', expected one of {}".format(section, sorted(Sections))
            )
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError("config section '{}' must be a mapping".format(section))
        for key, value in values.items():
            if key not in Sections[section]:
                raise ConfigError("unknown key '{}.{}'".format(section, key))
            merged[section][key] = copy.deepcopy(value)
    return merged


def load_config(path=None, overrides=None):
    config = default_config()
    if path is not None:
        with open(path) as f:
            try:
                loaded = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError("{}: {}".format(path, e))
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("{}: top level must be a mapping of sections".format(path))
        config = merge_config(config, loaded)
    return merge_config(config, overrides)


def dump_config(config, path):
    with open(path, "w") as f:
        yaml.safe_dump(config, f, sort_keys=True, default_flow_style=None)
