"""
On-disk formats.

Patient files and checkpoints share one container layout::

    <magic line>\\n
    <byte length of the text section>\\n
    <INI text section>
    <raw little-endian float64 payload, row-major>

The text section holds everything a human may want to audit (labels, mask,
schedules, configuration); the payload holds the bulk numbers. Metric and
attention exports are JSON lines and tab-separated tables. Every write goes
through a temporary file and a rename.
"""

import configparser
import io
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .connectivity import TimeSeries, TumorMask, WindowConfig
from .errors import ConfigError, FormatError
from .loss import LabelTensor
from .model import TASKS, ModelConfig, ModelState, Task, build_variant
from .settings import parse_options, render_ini, to_options
from .synthdata import SYSTEMS, SynthPatient
from .utils import (
    atomic_write_bytes,
    atomic_write_text,
    format_index_list,
    parse_index_list,
)

logger = logging.getLogger("eloqnet.fileio")

PATIENT_MAGIC = "ELOQNET-PATIENT"
CHECKPOINT_MAGIC = "ELOQNET-CHECKPOINT"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f8")

PATIENT_SUFFIX = ".eloq"
CHECKPOINT_NAME = "model.ckpt"
COHORT_INDEX = "cohort.ini"


def _pack(magic: str, sections: dict, payload: bytes) -> bytes:
    text = render_ini(sections).encode("utf-8")
    head = f"{magic} {FORMAT_VERSION}\n{len(text)}\n".encode("ascii")
    return head + text + payload


def _unpack(path: Path, magic: str) -> tuple[configparser.ConfigParser, bytes]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"File not found: {path}")
    try:
        first, rest = raw.split(b"\n", 1)
        length_line, rest = rest.split(b"\n", 1)
        name, version_text = first.decode("ascii").split()
        version = int(version_text)
        length = int(length_line)
    except ValueError:
        raise FormatError(f"{path} is not an eloqnet container")
    if name != magic:
        raise FormatError(f"{path}: expected a {magic} file, found {name}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if length > len(rest):
        raise FormatError(f"{path}: truncated text section")

    parser = configparser.ConfigParser()
    try:
        parser.read_string(rest[:length].decode("utf-8"))
    except (configparser.Error, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: unreadable text section: {e}")
    return parser, rest[length:]


def _read_payload(payload: bytes, shape: tuple, path: Path) -> np.ndarray:
    expected = int(np.prod(shape)) * PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {expected} for {shape}"
        )
    return np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(shape).astype(np.float64)


def _get(
    parser: configparser.ConfigParser, section: str, key: str, path: Path
) -> str:
    try:
        return parser.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        raise FormatError(f"{path}: missing [{section}] {key}")


def format_intervals(active: np.ndarray) -> str:
    """Half-open ``start:stop`` runs of True frames."""
    padded = np.concatenate([[False], np.asarray(active, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return ",".join(f"{a}:{b}" for a, b in zip(edges[::2], edges[1::2]))


def parse_intervals(text: str, frames: int) -> np.ndarray:
    active = np.zeros(frames, dtype=bool)
    for part in filter(None, (p.strip() for p in text.split(","))):
        start, stop = (int(v) for v in part.split(":"))
        active[start:stop] = True
    return active


def write_patient(path: Path, patient: SynthPatient) -> Path:
    """Store a patient in the container format."""
    data = patient.time_series.data
    sections: dict[str, dict[str, str]] = {
        "header": {
            "patient_id": patient.patient_id,
            "regions": str(data.shape[1]),
            "frames": str(data.shape[0]),
            "dtype": PAYLOAD_DTYPE.str,
            "order": "row-major",
            "bilateral": "true" if patient.bilateral else "false",
        },
        "mask": {"regions": format_index_list(sorted(patient.mask.region_indices))},
        "labels": {
            str(task): format_index_list(patient.labels.eloquent_regions(task))
            for task in patient.labels.present_tasks
        },
        "communities": {
            str(task): format_index_list(members)
            for task, members in patient.communities.items()
        },
        "schedule": {
            system: format_intervals(patient.schedules[system]) for system in SYSTEMS
        },
    }
    payload = np.ascontiguousarray(data, dtype=PAYLOAD_DTYPE).tobytes()
    atomic_write_bytes(path, _pack(PATIENT_MAGIC, sections, payload))
    return Path(path)


def read_patient(path: Path) -> SynthPatient:
    """Load a patient written by :func:`write_patient`.

    Raises:
        FormatError: If the file is damaged or inconsistent.
    """
    path = Path(path)
    parser, payload = _unpack(path, PATIENT_MAGIC)
    try:
        regions = int(_get(parser, "header", "regions", path))
        frames = int(_get(parser, "header", "frames", path))
        tumor = parse_index_list(_get(parser, "mask", "regions", path))
        eloquent = {
            Task(key): parse_index_list(value)
            for key, value in parser.items("labels")
        }
        communities = {
            Task(key): parse_index_list(value)
            for key, value in parser.items("communities")
        }
        schedules = {
            system: parse_intervals(_get(parser, "schedule", system, path), frames)
            for system in SYSTEMS
        }
    except (ValueError, configparser.NoSectionError) as e:
        raise FormatError(f"{path}: invalid patient metadata: {e}")

    data = _read_payload(payload, (frames, regions), path)
    mask = TumorMask(frozenset(tumor))
    mask.validate(regions)
    labels = LabelTensor.from_regions(regions, eloquent, tumor)
    return SynthPatient(
        patient_id=_get(parser, "header", "patient_id", path),
        time_series=TimeSeries(data),
        mask=mask,
        labels=labels,
        communities={t: communities.get(t, []) for t in TASKS},
        schedules=schedules,
        bilateral=parser.getboolean("header", "bilateral", fallback=False),
    )


def write_cohort(out_dir: Path, patients: Sequence[SynthPatient]) -> list[Path]:
    """Write one file per patient plus the cohort index.

    Returns:
        list[Path]: Every written file, index last.
    """
    out_dir = Path(out_dir)
    written = [
        write_patient(out_dir / f"{p.patient_id}{PATIENT_SUFFIX}", p) for p in patients
    ]
    index = {
        "cohort": {
            "patients": str(len(patients)),
            "regions": str(patients[0].regions) if patients else "0",
        },
        "patients": {p.patient_id: f"{p.patient_id}{PATIENT_SUFFIX}" for p in patients},
    }
    index_path = out_dir / COHORT_INDEX
    atomic_write_text(index_path, render_ini(index))
    written.append(index_path)
    logger.info(f"Wrote {len(patients)} patient files to {out_dir}")
    return written


def read_cohort(cohort_dir: Path) -> list[SynthPatient]:
    """Load every patient listed in a cohort index.

    Raises:
        ConfigError: If the index is missing.
        FormatError: If a patient file is damaged.
    """
    cohort_dir = Path(cohort_dir)
    index_path = cohort_dir / COHORT_INDEX
    if not index_path.is_file():
        raise ConfigError(f"No {COHORT_INDEX} in {cohort_dir}")
    parser = configparser.ConfigParser()
    parser.read(index_path, encoding="utf-8")
    if not parser.has_section("patients"):
        raise FormatError(f"{index_path}: missing [patients] section")
    patients = [read_patient(cohort_dir / name) for _, name in parser.items("patients")]
    regions = {p.regions for p in patients}
    if len(regions) > 1:
        raise FormatError(f"Cohort mixes region counts {sorted(regions)}")
    logger.debug(f"Loaded {len(patients)} patients from {cohort_dir}")
    return patients


def write_checkpoint(path: Path, state: ModelState, window: WindowConfig) -> Path:
    """Store parameters, architecture and window settings."""
    params = state.parameters()
    model = {"regions": str(state.config.regions), **to_options(state.config, "model")}
    sections = {
        "checkpoint": {"parameters": str(len(params))},
        "model": model,
        "window": to_options(window, "window"),
        "parameters": {
            name: "x".join(str(d) for d in p.shape) for name, p in params.items()
        },
    }
    payload = b"".join(
        np.ascontiguousarray(p.value, dtype=PAYLOAD_DTYPE).tobytes()
        for p in params.values()
    )
    atomic_write_bytes(path, _pack(CHECKPOINT_MAGIC, sections, payload))
    return Path(path)


def read_checkpoint(path: Path) -> tuple[ModelState, WindowConfig]:
    """Rebuild a model written by :func:`write_checkpoint`.

    Raises:
        FormatError: If parameter names or shapes do not match the stored
            architecture.
    """
    path = Path(path)
    parser, payload = _unpack(path, CHECKPOINT_MAGIC)
    if not parser.has_section("model") or not parser.has_section("parameters"):
        raise FormatError(f"{path}: missing [model] or [parameters] section")
    model_items = dict(parser.items("model"))
    try:
        regions = int(model_items.pop("regions"))
    except (KeyError, ValueError):
        raise FormatError(f"{path}: missing region count")
    cfg = ModelConfig(
        regions=regions, **parse_options(ModelConfig, "model", model_items)
    )
    window_items = dict(parser.items("window")) if parser.has_section("window") else {}
    window = WindowConfig(**parse_options(WindowConfig, "window", window_items))

    state = build_variant(cfg, np.random.default_rng(0))
    params = state.parameters()
    stored = dict(parser.items("parameters"))
    if list(stored) != list(params):
        raise FormatError(f"{path}: parameter names do not match a {cfg.variant} model")

    offset = 0
    for name, p in params.items():
        shape = tuple(int(d) for d in stored[name].split("x") if d)
        if shape != p.shape:
            raise FormatError(f"{path}: {name} has shape {shape}, expected {p.shape}")
        size = p.size * PAYLOAD_DTYPE.itemsize
        p.value = _read_payload(payload[offset : offset + size], shape, path)
        offset += size
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing payload bytes")
    logger.debug(f"Loaded checkpoint {path} ({len(params)} tensors)")
    return state, window


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Cannot serialise {type(value).__name__}")


def write_jsonl(path: Path, records: Iterable[dict]) -> Path:
    """One JSON object per line, keys sorted."""
    lines = [
        json.dumps(r, sort_keys=True, default=_json_default) + "\n" for r in records
    ]
    atomic_write_text(path, "".join(lines))
    return Path(path)


def read_jsonl(path: Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_tsv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buffer = io.StringIO()
    buffer.write("\t".join(header) + "\n")
    for row in rows:
        buffer.write("\t".join(_cell(v) for v in row) + "\n")
    atomic_write_text(path, buffer.getvalue())
    return Path(path)


def _cell(value: Any) -> str:
    if value is None:
        return "NA"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_attention(path: Path, language: np.ndarray, motor: np.ndarray) -> Path:
    """Time by attention table of one patient."""
    rows = [(t, a, b) for t, (a, b) in enumerate(zip(language, motor))]
    return write_tsv(path, ["window", "language", "motor"], rows)
