"""INI run configuration: typed schema, overrides, resolved echo.

Every key has a declared type and default; unknown sections or keys are
errors. The resolved configuration is written back as INI (``run.meta``),
so a finished run can be replayed with ``--config run.meta``.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import fields
from pathlib import Path

from ecgc.errors import ConfigError
from ecgc.nn.encoder import EncoderConfig
from ecgc.transforms import AUGMENTATIONS


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _names(s: str) -> tuple[str, ...]:
    return tuple(x for x in s.replace(",", " ").split())


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _opt_str(s: str):
    return None if s.strip().lower() in ("", "none") else s.strip()


def _show(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(_show(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_ENCODER_TYPES = {f.name: (_bool if f.type in ("bool", bool) else str if f.name == "dtype" else int) for f in fields(EncoderConfig) if f.name != "seed"}
_ENCODER_DEFAULTS = {k: v for k, v in EncoderConfig().to_dict().items() if k != "seed"}

SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {"seed": (int, 0), "output_dir": (str, "runs/out")},
    "data": {
        "manifest": (_opt_str, None),
        "normalize": (_bool, True),
        "n_records": (int, 400),
        "class_proportions": (_floats, (0.25, 0.25, 0.25, 0.25)),
        "noise_std": (float, 0.01),
        "duration_s": (float, 10.0),
        "split_ratios": (_floats, (0.6, 0.2, 0.2)),
        "split_seed": (int, 0),
        "stratify": (_bool, False),
        "workers": (int, 1),
    },
    "strategy": {
        "kind": (str, "Augment"),
        "temporal_lead_mode": (str, "time"),
        "v_segments": (int, 2),
        "h": (_opt_float, None),
        "rhythm_only": (_bool, False),
        "raw_distance": (_bool, False),
        "fallback": (_bool, True),
    },
    "augment": {
        "enabled": (_names, AUGMENTATIONS),
        "jitter_std": (float, 0.05),
        "scale_range": (_floats, (0.8, 1.2)),
        "warp_knots": (int, 4),
        "warp_strength": (float, 0.2),
    },
    "encoder": {k: (_ENCODER_TYPES[k], v) for k, v in _ENCODER_DEFAULTS.items()},
    "train": {
        "epochs": (int, 50),
        "lr": (float, 1e-4),
        "batch_size": (int, 64),
        "optimizer": (str, "adam"),
        "temperature": (float, 0.07),
        "loss_variant": (str, "sum_out"),
        "stabilize": (_bool, True),
    },
    "eval": {
        "checkpoint": (_opt_str, None),
        "label": (_opt_str, None),
        "probe_epochs": (int, 10),
        "probe_lr": (float, 1e-2),
        "probe_batch_size": (int, 64),
        "baseline_epochs": (int, 50),
        "baseline_lr": (float, 1e-4),
    },
}
IGNORED_SECTIONS = ("meta",)


class RunConfig:
    """Resolved configuration: ``cfg["section"]["key"]`` gives the typed value."""

    def __init__(self, values: dict[str, dict]):
        self.values = values

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["run"]["output_dir"])

    def to_ini(self, meta: dict | None = None) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in SCHEMA.items():
            cp[section] = {k: _show(self.values[section][k]) for k in keys}
        if meta:
            cp["meta"] = {k: _show(v) for k, v in meta.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _parse_value(section: str, key: str, raw: str):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}] (valid: {', '.join(SCHEMA[section])})")
    typ = SCHEMA[section][key][0]
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the INI file at ``path``, then ``section.key=value`` overrides."""
    values = {s: {k: default for k, (_, default) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in cp.sections():
            if section in IGNORED_SECTIONS:
                continue
            for key, raw in cp[section].items():
                values.setdefault(section, {})[key] = _parse_value(section, key, raw)
    for item in overrides or []:
        lhs, sep, raw = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        values[section][key.strip()] = _parse_value(section, key.strip(), raw.strip())
    return RunConfig(values)
