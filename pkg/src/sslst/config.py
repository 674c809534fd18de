"""Experiment configuration: JSON with fixed sections, validated against a defaults tree."""
from __future__ import annotations

import copy
import json
from pathlib import Path

OPTIONAL_STR = (str, type(None))
OPTIONAL_NUM = (int, float, type(None))

# Each leaf is (default, accepted types).  Nested dicts are sections.
SCHEMA: dict = {
    "data": {
        "train": (None, OPTIONAL_STR),
        "test": (None, OPTIONAL_STR),
        "vocab": (None, OPTIONAL_STR),
        "vocab_kind": ("char", (str,)),
        "vocab_size": (1000, (int,)),
        "synth": {
            "n_train": (2000, (int,)),
            "n_test": (200, (int,)),
            "alphabet": (20, (int,)),
            "seed": (1, (int,)),
            "test_seed": (2, (int,)),
            "language": ("en", (str,)),
            "offset_hz": (60.0, (int, float)),
        },
    },
    "features": {
        "kind": ("fbank", (str,)),
        "cpc": (None, OPTIONAL_STR),
        "vq": (None, OPTIONAL_STR),
        "mlm": (None, OPTIONAL_STR),
        "standardize": (True, (bool,)),
    },
    "model": {
        "type": ("seq2seq", (str,)),
        "input_hidden": (128, (int,)),
        "conv_channels": (16, (int,)),
        "encoder_hidden": (128, (int,)),
        "encoder_layers": (3, (int,)),
        "decoder_layers": (2, (int,)),
        "decoder_hidden": (256, (int,)),
        "embed_dim": (64, (int,)),
        "attention_dim": (128, (int,)),
        "freeze_encoder": (False, (bool,)),
        "cpc_channels": (64, (int,)),
        "codebook_size": (64, (int,)),
        "mlm_width": (128, (int,)),
        "mlm_blocks": (4, (int,)),
        "mlm_heads": (4, (int,)),
    },
    "training": {
        "epochs": (50, (int,)),
        "steps": (2000, (int,)),
        "seed": (0, (int,)),
        "frame_budget": (8000, (int,)),
        "batch": (8, (int,)),
        "crop": (8000, (int,)),
        "kmeans_iters": (25, (int,)),
        "mask_prob": (0.15, (int, float)),
        "mask_span": (1, (int,)),
        "keep_checkpoints": (5, (int,)),
        "target_bleu": (None, OPTIONAL_NUM),
        "schedule": {
            "kind": ("fixed", (str,)),
            "peak": (1e-3, (int, float)),
            "warmup": (0, (int,)),
            "total": (0, (int,)),
            "end": (0.0, (int, float)),
        },
        "augment": {
            "time_masks": (2, (int,)),
            "time_width": (100, (int,)),
            "freq_masks": (2, (int,)),
            "freq_width": (27, (int,)),
        },
    },
    "transfer": {
        "scope": (None, OPTIONAL_STR),
        "source": (None, OPTIONAL_STR),
        "source_id": (None, OPTIONAL_STR),  # filled in by the run
    },
    "decode": {
        "checkpoint": (None, OPTIONAL_STR),
        "beam": (5, (int,)),
        "max_len": (200, (int,)),
        "alpha": (1.0, (int, float)),
        "average": (5, (int,)),
        "hypotheses": (None, OPTIONAL_STR),
    },
    "output": ("runs/default", (str,)),
}

CHOICES = {
    ("data", "vocab_kind"): ("char", "subword"),
    ("data", "synth", "language"): ("en", "x"),
    ("features", "kind"): ("fbank", "cpc", "vq", "mlm"),
    ("model", "type"): ("seq2seq", "hybrid"),
    ("training", "schedule", "kind"): ("fixed", "polynomial"),
    ("transfer", "scope"): (None, "encoder", "encoder+decoder"),
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


def defaults(schema: dict = SCHEMA) -> dict:
    return {k: defaults(v) if isinstance(v, dict) else copy.deepcopy(v[0]) for k, v in schema.items()}


def _merge(schema: dict, user: dict, path: tuple, problems: list[str]) -> dict:
    out = {}
    for key in user:
        if key not in schema:
            problems.append(f"unknown key {'.'.join(path + (key,))}")
    for key, spec in schema.items():
        where = path + (key,)
        if isinstance(spec, dict):
            given = user.get(key, {})
            if not isinstance(given, dict):
                problems.append(f"{'.'.join(where)} must be an object")
                given = {}
            out[key] = _merge(spec, given, where, problems)
            continue
        default, types = spec
        value = user.get(key, default)
        if isinstance(value, bool) and bool not in types:
            problems.append(f"{'.'.join(where)} must be {'/'.join(t.__name__ for t in types)}, got bool")
        elif not isinstance(value, types):
            problems.append(f"{'.'.join(where)} must be {'/'.join(t.__name__ for t in types)}, "
                            f"got {type(value).__name__}")
        elif where in CHOICES and value not in CHOICES[where]:
            problems.append(f"{'.'.join(where)} must be one of {CHOICES[where]}, got {value!r}")
        elif isinstance(value, (int, float)) and not isinstance(value, bool) and value < 0:
            problems.append(f"{'.'.join(where)} must be non-negative")
        out[key] = value
    return out


def resolve(user: dict | None = None) -> dict:
    """Defaults overlaid with ``user``; raises :class:`ConfigError` listing every problem."""
    user = user or {}
    problems: list[str] = []
    if not isinstance(user, dict):
        raise ConfigError(["configuration must be a JSON object"])
    resolved = _merge(SCHEMA, user, (), problems)
    if problems:
        raise ConfigError(problems)
    return resolved


def load_config(path) -> dict:
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    return resolve(user)


def write_config(config: dict, path) -> None:
    Path(path).write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
