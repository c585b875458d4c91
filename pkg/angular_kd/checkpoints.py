# checkpoints.py

"""Plain-text checkpoints.

Layout::

    angular-kd-checkpoint <version>
    config <json object>
    rng <json object or null>
    array <name> <comma separated shape, empty for scalars>
    <values, %.17g, space separated>
    ...
    end
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Protocol, Sequence

import numpy as np

from .autodiff import DiffNode, Tensor
from .constants import CHECKPOINT_FORMAT_VERSION, CHECKPOINT_HEADER
from .helper.errors import FormatError, StorageError

logger = logging.getLogger(__name__)


class Checkpointable(Protocol):
    def named_parameters(self) -> Dict[str, DiffNode]: ...

    def named_buffers(self) -> Dict[str, Tensor]: ...


@dataclass
class Checkpoint:
    arrays: Dict[str, Tensor]
    config: Dict[str, str] = field(default_factory=dict)
    rng_state: Dict[str, Any] | None = None
    format_version: int = CHECKPOINT_FORMAT_VERSION


def collect_arrays(bundles: Sequence[Checkpointable]) -> Dict[str, Tensor]:
    arrays: Dict[str, Tensor] = {}
    for bundle in bundles:
        for name, param in bundle.named_parameters().items():
            arrays[name] = param.value.copy()
        for name, buffer in bundle.named_buffers().items():
            arrays[name] = buffer.copy()
    return arrays


def _format_array(name: str, values: Tensor) -> str:
    shape = ",".join(str(dim) for dim in values.shape)
    body = " ".join("%.17g" % value for value in values.reshape(-1))
    return f"array {name} {shape}\n{body}\n"


def save_checkpoint(
    source: Sequence[Checkpointable] | Mapping[str, Tensor],
    path: str | Path,
    *,
    config: Mapping[str, str] | None = None,
    rng_state: Dict[str, Any] | None = None,
) -> Path:
    arrays = dict(source) if isinstance(source, Mapping) else collect_arrays(source)
    path = Path(path)
    lines = [
        f"{CHECKPOINT_HEADER} {CHECKPOINT_FORMAT_VERSION}\n",
        f"config {json.dumps(dict(config or {}), sort_keys=True)}\n",
        f"rng {json.dumps(rng_state, sort_keys=True)}\n",
    ]
    lines.extend(_format_array(name, np.asarray(values, dtype=np.float64)) for name, values in arrays.items())
    lines.append("end\n")

    staging = path.with_name(path.name + ".tmp")
    try:
        staging.write_text("".join(lines), encoding="utf-8")
        os.replace(staging, path)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info("[CHECKPOINT] Saved %d arrays to %s", len(arrays), path)
    return path


def _parse_shape(field_text: str, path: Path) -> tuple:
    if not field_text:
        return ()
    try:
        shape = tuple(int(dim) for dim in field_text.split(","))
    except ValueError as exc:
        raise FormatError(f"malformed shape field {field_text!r} in {path}") from exc
    if any(dim < 0 for dim in shape):
        raise FormatError(f"negative dimension in shape {field_text!r} in {path}")
    return shape


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc

    header = lines[0].split(" ") if lines else []
    if len(header) != 2 or header[0] != CHECKPOINT_HEADER:
        raise FormatError(f"{path} is not a checkpoint file")
    if header[1] != str(CHECKPOINT_FORMAT_VERSION):
        raise FormatError(
            f"unsupported checkpoint format_version {header[1]} in {path} "
            f"(this build reads version {CHECKPOINT_FORMAT_VERSION})"
        )

    try:
        config_line, rng_line = lines[1], lines[2]
        if not config_line.startswith("config ") or not rng_line.startswith("rng "):
            raise FormatError(f"missing config/rng records in {path}")
        config = json.loads(config_line[len("config "):])
        rng_state = json.loads(rng_line[len("rng "):])
    except (IndexError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed checkpoint metadata in {path}") from exc

    arrays: Dict[str, Tensor] = {}
    cursor = 3
    while True:
        if cursor >= len(lines):
            raise FormatError(f"checkpoint {path} ends without an end record")
        record = lines[cursor]
        if record == "end":
            break
        parts = record.split(" ")
        if parts[0] != "array" or len(parts) != 3 or cursor + 1 >= len(lines):
            raise FormatError(f"malformed array record at line {cursor + 1} of {path}")
        name, shape = parts[1], _parse_shape(parts[2], path)
        body = lines[cursor + 1]
        try:
            values = np.array([float(token) for token in body.split()], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"non-numeric values for {name} in {path}") from exc
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise FormatError(f"{name} holds {values.size} values but shape is {shape}")
        arrays[name] = values.reshape(shape)
        cursor += 2

    return Checkpoint(arrays=arrays, config=config, rng_state=rng_state)


def restore_arrays(bundles: Sequence[Checkpointable], checkpoint: Checkpoint) -> None:
    """Copy checkpoint arrays into the bundles' parameters and buffers in place."""
    for bundle in bundles:
        targets: Dict[str, Tensor] = {name: p.value for name, p in bundle.named_parameters().items()}
        targets.update(bundle.named_buffers())
        for name, target in targets.items():
            stored = checkpoint.arrays.get(name)
            if stored is None:
                raise FormatError(f"checkpoint has no array named {name}")
            if stored.shape != target.shape:
                raise FormatError(f"checkpoint array {name} has shape {stored.shape}, expected {target.shape}")
            target[...] = stored
