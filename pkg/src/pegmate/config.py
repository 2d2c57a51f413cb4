"""Key-value text configuration.

One ``key = value`` per line; ``#`` and ``;`` start comments. Dotted keys
address nested settings::

    seed = 7
    n_id_retries = 2
    render.mm_per_pixel = 0.15
    noise.centroid_bias_mm = 1.5
    spiral.max_radius_mm = 5
    vlm.url = http://localhost:8000/v1/chat/completions
"""

from __future__ import annotations

import configparser
import dataclasses
import os

from .errors import MissingFileError, ValidationError
from .insertion import SpiralParams
from .pipeline import ENV_TOKEN, ENV_URL, PipelineConfig
from .worldgen import NoiseConfig, RenderConfig

_SECTION = "pegmate"

# keys that configure experiments rather than the pipeline itself
EXPERIMENT_DEFAULTS = {
    "world.n_boards": 12,
    "world.n_pegs": 5,
    "world.clutter": 2,
    "bench.n": 20,
    "bench.clearance_mm": 0.5,
    "bench.separation_mm": 0.3,
    "bench.near_tie_pairs": 4,
}


def parse_text(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"bad config: {exc}") from None
    if parser.sections() != [_SECTION]:
        raise ValidationError("config files take plain key = value lines without [sections]")
    return dict(parser[_SECTION])


def read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_text(fh.read())
    except FileNotFoundError:
        raise MissingFileError(f"config file not found: {path}") from None


def _coerce(value: str, like, key):
    try:
        if isinstance(like, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise ValidationError(f"config key '{key}' has an invalid value {value!r}") from None
    return value


def _apply(obj, prefix, items, used):
    changes = {}
    for f in dataclasses.fields(obj):
        key = f"{prefix}{f.name}"
        if key in items:
            changes[f.name] = _coerce(items[key], getattr(obj, f.name), key)
            used.add(key)
    return dataclasses.replace(obj, **changes) if changes else obj


def build_config(items: dict, seed=None, backend=None):
    """PipelineConfig plus experiment settings and VLM endpoint from parsed key-value items.

    Command-line ``seed`` and ``backend`` override the file. Unknown keys
    raise ValidationError.
    """
    used = set()
    noise = _apply(NoiseConfig(), "noise.", items, used)
    render = _apply(dataclasses.replace(RenderConfig(), noise=noise), "render.", items, used)
    spiral = _apply(SpiralParams(), "spiral.", items, used)
    top = {}
    for f in dataclasses.fields(PipelineConfig):
        if f.name in items and f.name not in ("render", "spiral"):
            default = f.default if f.default is not dataclasses.MISSING else None
            like = default.value if hasattr(default, "value") else default
            top[f.name] = _coerce(items[f.name], like, f.name)
            used.add(f.name)
    if seed is not None:
        top["seed"] = int(seed)
    if backend is not None:
        top["backend"] = backend
    render = dataclasses.replace(render, seed=top.get("seed", render.seed))
    cfg = PipelineConfig(render=render, spiral=spiral, **top)

    experiment = dict(EXPERIMENT_DEFAULTS)
    for k, default in EXPERIMENT_DEFAULTS.items():
        if k in items:
            experiment[k] = _coerce(items[k], default, k)
            used.add(k)
    vlm = {
        "url": items.get("vlm.url") or os.environ.get(ENV_URL),
        "token": items.get("vlm.token") or os.environ.get(ENV_TOKEN),
    }
    if "vlm.model" in items:
        vlm["model"] = items["vlm.model"]
    used.update(k for k in ("vlm.url", "vlm.token", "vlm.model") if k in items)
    unknown = sorted(set(items) - used)
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    return cfg, experiment, vlm
