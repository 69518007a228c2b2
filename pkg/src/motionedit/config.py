"""Sectioned ``key = value`` run configuration.

Sections mirror the dataclasses they feed (``model``, ``train``,
``pretrain``, ``scene``, ``edit``).  Values are coerced to the type of the
built-in default; unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .skeleton import SceneSpec
from .training import PretrainConfig, TrainConfig
from .unet import UNetConfig


class ConfigSchemaError(ValueError):
    pass


@dataclass
class EditConfig:
    steps: int = 50
    apply_offset: bool = True
    per_frame_offset: bool = False
    prompt: str = ""
    inversion_prompt: str = ""


SECTIONS = {
    "model": UNetConfig,
    "train": TrainConfig,
    "pretrain": PretrainConfig,
    "scene": SceneSpec,
    "edit": EditConfig,
}
_SKIP = {("model", "vocab")}
# keys whose default is None; parsed values take this type
_OPTIONAL = {("model", "injection_sites"): (0,), ("scene", "start_x"): 0.0}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(raw: str, default, key: str):
    text = raw.strip()
    if text.lower() == "none":
        return None
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in parts)
    except ValueError:
        raise ConfigSchemaError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return text


def defaults() -> dict[str, dict]:
    out = {}
    for name, cls in SECTIONS.items():
        inst = cls()
        out[name] = {f.name: getattr(inst, f.name) for f in fields(cls) if (name, f.name) not in _SKIP}
    return out


@dataclass
class RunConfig:
    model: UNetConfig
    train: TrainConfig
    pretrain: PretrainConfig
    scene: SceneSpec
    edit: EditConfig

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {_format(v)}" for k, v in asdict(getattr(self, name)).items()
                         if (name, k) not in _SKIP)
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> None:
        Path(path).write_text(self.to_ini())


def load_config(source: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Built-in defaults, then the file (unless ``source`` is ``None`` or ``"default"``), then overrides.

    Overrides are ``section.key=value`` strings.
    """
    values = defaults()
    if source is not None and str(source) != "default":
        path = Path(source)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read_string(path.read_text())
        except configparser.Error as exc:
            raise ConfigSchemaError(f"{path}: {exc}".splitlines()[0]) from None
        for section in parser.sections():
            for key, raw in parser[section].items():
                _assign(values, section, key, raw)
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigSchemaError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        _assign(values, section.strip(), key.strip(), raw)
    built = {}
    for name, cls in SECTIONS.items():
        try:
            built[name] = cls(**values[name])
        except TypeError as exc:
            raise ConfigSchemaError(f"[{name}] {exc}") from None
    return RunConfig(**built)


def _assign(values: dict, section: str, key: str, raw: str) -> None:
    if section not in values:
        raise ConfigSchemaError(f"unknown config section [{section}]")
    if key not in values[section]:
        raise ConfigSchemaError(f"unknown key {key!r} in [{section}]")
    ref = defaults()[section][key]
    if ref is None:
        ref = _OPTIONAL[(section, key)]
    values[section][key] = _parse(raw, ref, f"{section}.{key}")
