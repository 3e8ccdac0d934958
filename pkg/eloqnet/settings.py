"""
Run configuration files and run manifests.

A run configuration is an INI file with the optional sections ``[synth]``,
``[window]``, ``[model]``, ``[train]`` and ``[loss]``. Keys are the field
names of the matching dataclasses; missing keys keep their defaults.
Every command writes a ``manifest.ini`` holding a ``[run]`` section and the
full configuration, which can be passed back with ``--config``.
"""

import configparser
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

from .connectivity import WindowConfig
from .errors import ConfigError, FormatError
from .loss import LossMode, RiskWeights
from .model import ModelConfig
from .synthdata import SynthConfig
from .training import TrainConfig
from .utils import atomic_write_text

logger = logging.getLogger("eloqnet.settings")

MANIFEST_NAME = "manifest.ini"
RUN_SECTION = "run"

# Fields filled from elsewhere: regions from the data, risk weights from [loss]
_SKIPPED = {"model": {"regions"}, "train": {"risk_weights", "loss_mode"}}
_OPTIONAL = {"batch_size"}


@dataclass(frozen=True)
class RunConfig:
    """Every module configuration of one run.

    The model configuration is kept as keyword overrides because the region
    count comes from the data; see :meth:`model_config`.
    """

    synth: SynthConfig = field(default_factory=SynthConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    def model_config(self, regions: int, **overrides) -> ModelConfig:
        return ModelConfig(regions=regions, **{**self.model, **overrides})

    def with_seed(self, seed: int) -> "RunConfig":
        """Use ``seed`` for both data generation and training."""
        return dataclasses.replace(
            self,
            synth=dataclasses.replace(self.synth, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )


def convert_value(name: str, default: Any, text: str) -> Any:
    """Parse INI text into the type of ``default``.

    Raises:
        ValueError: If the text does not parse.
    """
    text = text.strip()
    if name in _OPTIONAL:
        return None if text.lower() in ("", "none") else int(text)
    if isinstance(default, bool):
        if text.lower() not in configparser.ConfigParser.BOOLEAN_STATES:
            raise ValueError(f"not a boolean: {text}")
        return configparser.ConfigParser.BOOLEAN_STATES[text.lower()]
    if isinstance(default, Enum):
        return type(default)(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        items = [part.strip() for part in text.split(",") if part.strip()]
        return tuple(kind(part) for part in items)
    return text


def format_value(value: Any) -> str:
    """Inverse of :func:`convert_value`; floats keep every digit."""
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, Enum):
        return str(value.value)
    return repr(value) if isinstance(value, float) else str(value)


def _field_defaults(cls, section: str) -> dict[str, Any]:
    skipped = _SKIPPED.get(section, set())
    defaults = {}
    for f in dataclasses.fields(cls):
        if f.name in skipped:
            continue
        if f.default is not dataclasses.MISSING:
            defaults[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            defaults[f.name] = f.default_factory()  # type: ignore[misc]
    return defaults


def to_options(obj: Any, section: str) -> dict[str, str]:
    """INI entries for the configurable fields of a config dataclass."""
    return {
        k: format_value(getattr(obj, k)) for k in _field_defaults(type(obj), section)
    }


def parse_options(cls, section: str, items: Mapping[str, str]) -> dict[str, Any]:
    """Typed keyword arguments for ``cls`` from INI entries.

    Raises:
        ConfigError: On unknown keys or values that do not parse.
    """
    defaults = _field_defaults(cls, section)
    values = {}
    for key, text in items.items():
        if key not in defaults:
            raise ConfigError(f"Unknown key '{key}' in section [{section}]")
        try:
            values[key] = convert_value(key, defaults[key], text)
        except ValueError as e:
            raise ConfigError(f"Invalid value for [{section}] {key} = {text}: {e}")
    return values


def _read_section(
    parser: configparser.ConfigParser, section: str, cls
) -> dict[str, Any]:
    if not parser.has_section(section):
        return {}
    return parse_options(cls, section, dict(parser.items(section)))


_LOSS_KEYS = {
    "mode": LossMode.LITERAL,
    "delta_language": RiskWeights().language,
    "delta_motor": RiskWeights().motor,
}


def parse_run_config(parser: configparser.ConfigParser) -> RunConfig:
    """Build a RunConfig from parsed INI content.

    Raises:
        ConfigError: On unknown sections or keys, or invalid values.
    """
    known = {"synth", "window", "model", "train", "loss", RUN_SECTION}
    unknown = [s for s in parser.sections() if s not in known]
    if unknown:
        raise ConfigError(f"Unknown configuration sections: {unknown}")

    loss = {}
    if parser.has_section("loss"):
        for key, text in parser.items("loss"):
            if key not in _LOSS_KEYS:
                raise ConfigError(f"Unknown key '{key}' in section [loss]")
            try:
                loss[key] = convert_value(key, _LOSS_KEYS[key], text)
            except ValueError as e:
                raise ConfigError(f"Invalid value for [loss] {key} = {text}: {e}")

    synth = SynthConfig(**_read_section(parser, "synth", SynthConfig))
    window = WindowConfig(**_read_section(parser, "window", WindowConfig))
    model = _read_section(parser, "model", ModelConfig)
    risk = RiskWeights(
        language=loss.get("delta_language", RiskWeights().language),
        motor=loss.get("delta_motor", RiskWeights().motor),
    )
    train = TrainConfig(
        **_read_section(parser, "train", TrainConfig),
        loss_mode=loss.get("mode", LossMode.LITERAL),
        risk_weights=risk,
    )
    run = RunConfig(synth=synth, window=window, model=model, train=train)
    # Validate the model options against the configured region count
    run.model_config(synth.regions)
    return run


def load_run_config(path: Optional[Path] = None) -> RunConfig:
    """Read a run configuration file, or return the defaults for None.

    Manifests are accepted too; their ``[run]`` section is ignored.

    Raises:
        ConfigError: If the file is missing or invalid.
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Configuration file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise FormatError(f"Failed to parse configuration file {path}: {e}")
    logger.debug(f"Loaded run configuration from {path}")
    return parse_run_config(parser)


def config_sections(run: RunConfig) -> dict[str, dict[str, str]]:
    """Echo of every configuration value as INI sections."""
    return {
        "synth": to_options(run.synth, "synth"),
        "window": to_options(run.window, "window"),
        "model": to_options(run.model_config(run.synth.regions), "model"),
        "train": to_options(run.train, "train"),
        "loss": {
            "mode": format_value(run.train.loss_mode),
            "delta_language": format_value(run.train.risk_weights.language),
            "delta_motor": format_value(run.train.risk_weights.motor),
        },
    }


def render_ini(sections: dict[str, dict[str, str]]) -> str:
    parser = configparser.ConfigParser()
    parser.read_dict(sections)
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(
    out_dir: Path,
    command: str,
    run: RunConfig,
    seed: Optional[int],
    inputs: list,
    outputs: list,
    started: str,
    extra: Optional[dict] = None,
    sections: Optional[Iterable[str]] = None,
) -> Path:
    """Write ``manifest.ini`` into ``out_dir``.

    Args:
        out_dir: Output directory of the command.
        command: Command name.
        run: Effective configuration.
        seed: Effective seed; None for commands that draw no random numbers.
        inputs: Input paths.
        outputs: Output paths, relative to ``out_dir`` where possible.
        started: Start timestamp from :func:`timestamp`.
        extra: Additional ``[run]`` entries.
        sections: Configuration sections to echo; all of them when None.

    Returns:
        Path: Path of the manifest.
    """
    from . import __version__

    run_section = {"command": command}
    if seed is not None:
        run_section["seed"] = str(seed)
    run_section.update(
        {
            "version": __version__,
            "inputs": ",".join(str(p) for p in inputs),
            "outputs": ",".join(str(p) for p in outputs),
            "started": started,
            "finished": timestamp(),
        }
    )
    run_section.update({k: str(v) for k, v in (extra or {}).items()})
    config = config_sections(run)
    if sections is not None:
        config = {name: config[name] for name in sections}
    path = Path(out_dir) / MANIFEST_NAME
    atomic_write_text(path, render_ini({RUN_SECTION: run_section, **config}))
    logger.debug(f"Wrote manifest {path}")
    return path


def load_manifest(path: Path) -> tuple[dict[str, str], RunConfig]:
    """Read a manifest back.

    Returns:
        tuple: The ``[run]`` entries and the configuration.

    Raises:
        FormatError: If the ``[run]`` section is missing.
    """
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"Manifest not found: {path}")
    except configparser.Error as e:
        raise FormatError(f"Failed to parse manifest {path}: {e}")
    if not parser.has_section(RUN_SECTION):
        raise FormatError(f"Missing [{RUN_SECTION}] section in manifest: {path}")
    return dict(parser.items(RUN_SECTION)), parse_run_config(parser)
