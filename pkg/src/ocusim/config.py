"""Experiment configuration files: sectioned key = value text (INI dialect).

Every getter names the offending section/key on failure so the CLI can
report schema violations precisely (exit code 2) before any work starts.
"""

from __future__ import annotations

import configparser
from pathlib import Path

import numpy as np

from .optics import OcuGeometry


class ConfigError(Exception):
    """Configuration or input-schema violation (CLI exit code 2)."""


class Config:
    def __init__(self, parser: configparser.ConfigParser, path: str):
        self.parser = parser
        self.path = path

    @classmethod
    def load(cls, path) -> "Config":
        file = Path(path)
        if not file.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(file.read_text())
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls(parser, str(path))

    def has(self, section: str, key: str | None = None) -> bool:
        if key is None:
            return self.parser.has_section(section)
        return self.parser.has_option(section, key)

    def require(self, section: str, key: str) -> str:
        if not self.parser.has_option(section, key):
            raise ConfigError(f"{self.path}: missing key [{section}] {key}")
        return self.parser.get(section, key)

    def get(self, section: str, key: str, default: str | None = None) -> str | None:
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        return default

    def _typed(self, section, key, default, convert, typename):
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"{self.path}: missing key [{section}] {key}")
            return default
        try:
            return convert(raw)
        except ValueError:
            raise ConfigError(
                f"{self.path}: key [{section}] {key} must be {typename}, got {raw!r}"
            ) from None

    def getint(self, section, key, default: int | None = None) -> int:
        return self._typed(section, key, default, int, "an integer")

    def getfloat(self, section, key, default: float | None = None) -> float:
        return self._typed(section, key, default, float, "a number")

    def getbool(self, section, key, default: bool | None = None) -> bool:
        def conv(raw: str) -> bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return self._typed(section, key, default, conv, "a boolean")


def geometry_from_config(cfg: Config, num_inputs: int | None = None) -> OcuGeometry:
    """Build an OcuGeometry from the optional [geometry] section.

    Missing keys fall back to the module defaults; ``num_inputs`` (derived
    from the kernel size elsewhere in the config) overrides the section.
    """
    sec = "geometry"
    kwargs = {}
    for name in ("wavelength", "slab_index", "slot_index", "layer_gap", "aperture",
                 "metaunit_period", "slot_width", "slot_gap", "slot_height",
                 "amplitude_coeff", "phase_coeff"):
        if cfg.has(sec, name):
            kwargs[name] = cfg.getfloat(sec, name)
    for name in ("num_layers", "metaunits_per_layer", "num_inputs"):
        if cfg.has(sec, name):
            kwargs[name] = cfg.getint(sec, name)
    for name in ("input_positions", "output_positions"):
        if cfg.has(sec, name):
            kwargs[name] = np.array([float(v) for v in cfg.require(sec, name).split()])
    if num_inputs is not None:
        kwargs["num_inputs"] = num_inputs
    try:
        return OcuGeometry(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: invalid geometry: {exc}") from None
