"""
Run configuration: sectioned `key = value` text.

    [train]   schedule, optimizer, seed
    [sampler] window side, views, mask ratio
    [encoder] Transformer shape
    [head]    reconstruction head width
    [data]    image size, patching, augmentation, corpus

Precedence is overrides > file > defaults. Unknown sections or keys are
rejected so a typo never silently falls back to a default.
"""

import configparser
from dataclasses import fields, MISSING
import typing
from typing import Any, Dict, Iterable, List, Tuple

from src.models.models import DataConfig, EncoderConfig, HeadConfig, SamplerConfig, TrainConfig
from src.utils.error_handling import ConfigError, LomarError

SECTIONS = {
    'train': TrainConfig,
    'sampler': SamplerConfig,
    'encoder': EncoderConfig,
    'head': HeadConfig,
    'data': DataConfig,
}

# Nested configs and values derived from other keys
_NOT_KEYS = {
    'train': {'sampler', 'encoder', 'head', 'data'},
    'sampler': {'seed'},
}

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def config_keys(section: str) -> List[str]:
    skip = _NOT_KEYS.get(section, set())
    return [f.name for f in fields(SECTIONS[section]) if f.name not in skip]


def _field_types(section: str) -> Dict[str, Any]:
    return typing.get_type_hints(SECTIONS[section])


def _convert(key: str, raw: str, annotation: Any) -> Any:
    text = raw.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if origin is typing.Union and type(None) in args:
        if text.lower() in ('', 'none'):
            return None
        inner = next(a for a in args if a is not type(None))
        return _convert(key, text, inner)
    if origin in (tuple, Tuple):
        parts = [p for p in text.replace('(', '').replace(')', '').split(',') if p.strip()]
        if len(parts) != len(args):
            raise ConfigError(key, f"expected {len(args)} comma-separated values, got {raw!r}")
        return tuple(_convert(key, p, a) for p, a in zip(parts, args))
    if annotation is bool:
        lowered = text.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(key, f"expected a boolean, got {raw!r}")
    if annotation is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got {raw!r}")
    if annotation is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {raw!r}")
    return text


def _read_text(text: str) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, default_section='__defaults__')
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError('config', f"cannot parse: {e}".splitlines()[0])
    values: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section (known: {', '.join(SECTIONS)})")
        values[section] = dict(parser.items(section))
    return values


def _apply_overrides(values: Dict[str, Dict[str, str]], overrides: Iterable[str]) -> None:
    """Overrides beat the file. A window side overridden in one section also sets the other."""
    overridden = set()
    for item in overrides:
        if '=' not in item:
            raise ConfigError(item, "override must look like section.key=value")
        dotted, raw = item.split('=', 1)
        dotted = dotted.strip()
        if '.' not in dotted:
            raise ConfigError(dotted, "override key needs a section, e.g. sampler.k")
        section, key = dotted.split('.', 1)
        if section not in SECTIONS:
            raise ConfigError(dotted, f"unknown section {section!r}")
        values.setdefault(section, {})[key] = raw
        overridden.add((section, key))
    for section, other in (('sampler', 'encoder'), ('encoder', 'sampler')):
        if (section, 'k') in overridden and (other, 'k') not in overridden:
            values.setdefault(other, {})['k'] = values[section]['k']


def parse_config(text: str = "", overrides: Iterable[str] = ()) -> TrainConfig:
    """
    Build a validated TrainConfig.

    A window side given in only one of [sampler] / [encoder] is used for both.

    Raises:
        ConfigError: naming the offending key
    """
    values = _read_text(text)
    _apply_overrides(values, overrides)

    converted: Dict[str, Dict[str, Any]] = {}
    for section, entries in values.items():
        known = set(config_keys(section))
        types = _field_types(section)
        converted[section] = {}
        for key, raw in entries.items():
            if key not in known:
                raise ConfigError(f"{section}.{key}", "unknown key")
            converted[section][key] = _convert(f"{section}.{key}", raw, types[key])

    sampler_vals = converted.get('sampler', {})
    encoder_vals = converted.get('encoder', {})
    if 'k' in sampler_vals and 'k' not in encoder_vals:
        encoder_vals['k'] = sampler_vals['k']
    elif 'k' in encoder_vals and 'k' not in sampler_vals:
        sampler_vals['k'] = encoder_vals['k']

    try:
        sampler = SamplerConfig(**sampler_vals)
        encoder = EncoderConfig(**encoder_vals)
        head = HeadConfig(**converted.get('head', {}))
        data = DataConfig(**converted.get('data', {}))
        train_vals = converted.get('train', {})
        cfg = TrainConfig(sampler=sampler, encoder=encoder, head=head, data=data, **train_vals)
    except ConfigError:
        raise
    except LomarError as e:
        raise ConfigError('config', str(e))
    return cfg


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ', '.join(_format(v) for v in value)
    return str(value)


def dump_config(cfg: TrainConfig) -> str:
    """Fully resolved config text; parse_config(dump_config(c)) == c."""
    parts = {
        'train': cfg,
        'sampler': cfg.sampler,
        'encoder': cfg.encoder,
        'head': cfg.head,
        'data': cfg.data,
    }
    lines = []
    for section, obj in parts.items():
        lines.append(f"[{section}]")
        for key in config_keys(section):
            value = getattr(obj, key)
            if value is None:
                continue
            lines.append(f"{key} = {_format(value)}")
        lines.append("")
    return "\n".join(lines)


def config_defaults() -> Dict[str, Dict[str, Any]]:
    """Default value of every key, by section (None where derived)."""
    out: Dict[str, Dict[str, Any]] = {}
    for section, cls in SECTIONS.items():
        out[section] = {}
        for f in fields(cls):
            if f.name not in config_keys(section):
                continue
            if f.default is not MISSING:
                out[section][f.name] = f.default
            else:
                out[section][f.name] = None
    return out
