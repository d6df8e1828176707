"""
Experiment configuration files.

One setting per line, ``section.key = value``, with ``#`` comments::

    precision = complex128
    phantom.n-frames = 16
    mask.accel = 8
    recon.k-half = 4
    recon.lambda = 0.01
    flow.grad-mode = unrolled

Keys may be written in snake or kebab case; unknown keys are rejected.
"""
import logging
import os
from pathlib import Path
from typing import (
    Any,
    Type,
)

import attrs
import cattrs
import humps  # noqa

from .converter import (
    RENAMES,
    Converter,
)
from .exceptions import ConfigError
from .motion import FlowOptConfig
from .phantom import PhantomSpec
from .recon import ReconConfig
from .sampling import MaskSpec
from .types import DType

logger = logging.getLogger(__name__)

"""
Types.
"""


@attrs.frozen
class MaskSettings:
    """
    Mask settings that do not follow from the phantom size.
    """

    accel: float = attrs.field(default=8.0, validator=attrs.validators.ge(1.0))
    n_center: int = attrs.field(default=4, validator=attrs.validators.ge(0))
    seed: int = 0
    age_boost: float = attrs.field(default=2.0, validator=attrs.validators.ge(0.0))


@attrs.frozen
class ExperimentConfig:
    phantom: PhantomSpec = attrs.field(factory=PhantomSpec)
    mask: MaskSettings = attrs.field(factory=MaskSettings)
    recon: ReconConfig = attrs.field(factory=ReconConfig)
    flow: FlowOptConfig = attrs.field(factory=FlowOptConfig)
    precision: DType = DType.Complex64

    def mask_spec(self, accel: float | None = None) -> MaskSpec:
        return MaskSpec(
            n_frames=self.phantom.n_frames,
            n_pe=self.phantom.ny,
            accel=self.mask.accel if accel is None else accel,
            n_center=self.mask.n_center,
            seed=self.mask.seed,
            age_boost=self.mask.age_boost,
        )


SECTIONS: dict[str, Type] = {
    "phantom": PhantomSpec,
    "mask": MaskSettings,
    "recon": ReconConfig,
    "flow": FlowOptConfig,
}
# Filled from `precision`.
DERIVED = {"phantom": {"dtype"}}


def _known_keys(section: str) -> set[str]:
    cls = SECTIONS[section]
    renames = RENAMES.get(cls, {})
    return {
        renames.get(field.name, field.name)
        for field in attrs.fields(cls)
        if field.name not in DERIVED.get(section, set())
    }


def _split(text: str) -> tuple[str | None, dict[str, dict[str, str]]]:
    precision = None
    sections: dict[str, dict[str, str]] = {name: {} for name in SECTIONS}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Line {number}: expected `key = value`, got {line!r}")
        raw_key, value = (part.strip() for part in line.split("=", 1))
        key = humps.dekebabize(raw_key)
        if key == "precision":
            precision = value
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or name not in _known_keys(section):
            raise ConfigError(f"Line {number}: unknown key `{raw_key}`")
        if name in sections[section]:
            raise ConfigError(f"Line {number}: duplicate key `{raw_key}`")
        sections[section][name] = value
    return precision, sections


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse the text of an experiment configuration file.

    :param text: File contents.

    :return: Validated configuration, defaults filled in.
    """
    converter = Converter()
    precision, sections = _split(text)
    try:
        dtype = DType.Complex64
        if precision is not None:
            dtype = converter.structure(precision, DType)
        values: dict[str, Any] = {"precision": dtype}
        for section, cls in SECTIONS.items():
            raw: dict[str, Any] = dict(sections[section])
            if section == "phantom":
                raw["dtype"] = dtype
            values[section] = converter.structure(raw, cls)
    except cattrs.BaseValidationError as exc:
        raise ConfigError("; ".join(cattrs.transform_error(exc)))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc))
    return ExperimentConfig(**values)


def load_config(path: str | os.PathLike[str] | None) -> ExperimentConfig:
    """
    Read an experiment configuration file, defaults only when ``path`` is None.
    """
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc.strerror}")
    config = parse_config(text)
    logger.info("Loaded config %s", path)
    return config


def dump_config(config: ExperimentConfig) -> str:
    """
    Render a configuration in the file format, every key spelled out.
    """
    converter = Converter()
    lines = [f"precision = {config.precision}"]
    for section in SECTIONS:
        values = converter.unstructure(getattr(config, section))
        for key, value in values.items():
            if key in DERIVED.get(section, set()) or value is None:
                continue
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{humps.kebabize(key)} = {value}")
    return "\n".join(lines) + "\n"
