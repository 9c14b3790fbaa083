"""Run configuration: flat ``key = value`` text with dotted section prefixes.

Precedence, lowest to highest: built-in defaults, the config file, the
``DGFLOW_SEED`` environment variable (for ``seed`` only), command-line flags.
"""

from __future__ import annotations

import os

SEED_ENV = "DGFLOW_SEED"


class ConfigError(ValueError):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(v) for v in str(text).split(","))


# key -> (default, parser)
SCHEMA = {
    "seed": (0, int),
    "net.blocks": (6, int),
    "net.atom_dim": (128, int),
    "net.pair_dim": (128, int),
    "net.n_rbf": (64, int),
    "net.cutoff": (20.0, float),
    "train.sigma": (0.1, float),
    "train.lr": (5e-4, float),
    "train.decay": (0.8, float),
    "train.patience": (40, int),
    "train.batch_size": (32, int),
    "train.epochs": (1000, int),
    "train.val_samples": (4, int),
    "flow.dt": (0.1, float),
    "synth.size": (200, int),
    "synth.min_atoms": (5, int),
    "synth.max_atoms": (5, int),
    "synth.displacement": (0.6, float),
    "synth.warp_seed": (0, int),
    "synth.density": (0.1, float),
    "split.fractions": ((0.8, 0.1, 0.1), _floats),
    "eval.calculator": ("none", str),
    "neb.surface": ("muller-brown", str),
    "neb.start": ((-0.558, 1.442), _floats),
    "neb.end": ((0.623, 0.028), _floats),
    "neb.images": (11, int),
    "neb.k": (0.1, float),
    "neb.fmax": (0.05, float),
    "neb.steps": (1000, int),
    "neb.climb": (True, _bool),
    "irc.step": (0.01, float),
    "irc.fmax": (0.1, float),
    "explore.samples": (20, int),
    "explore.k": (2, int),
    "explore.temperature": (300.0, float),
    "explore.sorted": (False, _bool),
}

CHOICES = {
    "eval.calculator": ("none", "morse"),
    "neb.surface": ("muller-brown", "morse"),
}


def defaults():
    return {k: v for k, (v, _) in SCHEMA.items()}


def _set(cfg, key, raw, origin):
    if key not in SCHEMA:
        raise ConfigError(f"{origin}: unknown key {key!r}")
    try:
        value = SCHEMA[key][1](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: bad value for {key}: {exc}") from None
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{origin}: {key} must be one of {', '.join(CHOICES[key])}")
    cfg[key] = value


def parse(text, origin="<config>"):
    """Parse config text into a dict of overrides (no defaults filled in)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        _set(out, key, raw, f"{origin}:{lineno}")
    return out


def load(path=None, overrides=None, env=None):
    """Defaults, then ``path``, then ``DGFLOW_SEED``, then ``overrides`` (key -> value or text)."""
    cfg = defaults()
    if path:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg.update(parse(text, str(path)))
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "").strip():
        _set(cfg, "seed", env[SEED_ENV], SEED_ENV)
    for key, value in (overrides or {}).items():
        if value is not None:
            _set(cfg, key, value, "command line")
    return cfg


def format_config(cfg):
    """Canonical text form, one ``key = value`` per line in sorted order."""
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
