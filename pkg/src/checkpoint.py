"""Single-file binary checkpoints.

Layout (all integers little-endian)::

    b"PVCK" | u32 version | u32 header length | JSON header | tensor data

The JSON header holds the scalar state (step, stage, config fingerprint, model
config, RNG states, best validation loss) and a tensor table of
``{name, dtype, shape, offset, nbytes}`` entries pointing into the data block.
Parameters are stored under their dotted names, AdamW moments under
``adam.m/<name>`` and ``adam.v/<name>``.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from model import ModelConfig, VisionLanguageModel

logger = logging.getLogger(__name__)

MAGIC = b"PVCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")
_DTYPES = {"<f4": np.float32, "<f8": np.float64}


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    """
    Everything needed to resume or reuse a training stage.

    Attributes:
        parameters (Dict[str, np.ndarray]): Model parameters by dotted name.
        optimizer (Dict[str, np.ndarray]): AdamW moments keyed ``adam.m/<name>``, ``adam.v/<name>``.
        step (int): Optimizer steps taken.
        fingerprint (str): Hash of the resolved stage configuration.
        model_config (Dict[str, Any]): `ModelConfig.to_dict()` of the model.
        stage (int): Stage that produced the checkpoint (0 for an untrained model).
        rng_state (Dict[str, Any]): Bit-generator states by role ("model", "data").
        best_valid_loss (Optional[float]): Validation loss of these parameters.
    """

    parameters: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    fingerprint: str = ""
    model_config: Dict[str, Any] = field(default_factory=dict)
    stage: int = 0
    rng_state: Dict[str, Any] = field(default_factory=dict)
    best_valid_loss: Optional[float] = None

    @classmethod
    def from_model(cls, model: VisionLanguageModel, **kwargs) -> "Checkpoint":
        kwargs.setdefault("rng_state", {"model": model.rng.bit_generator.state})
        return cls(
            parameters=model.state_dict(),
            model_config=model.config.to_dict(),
            **kwargs,
        )

    def build_model(self) -> VisionLanguageModel:
        """Instantiate the stored architecture and load the stored parameters."""
        config = ModelConfig.from_dict(self.model_config)
        model = VisionLanguageModel(config)
        model.load_state(self.parameters)
        if "model" in self.rng_state:
            model.rng.bit_generator.state = self.rng_state["model"]
        return model


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    """
    Write a checkpoint atomically enough for a single writer (temp file + rename).

    Args:
        checkpoint (Checkpoint): State to save.
        path (Path): Destination file.
    """
    tensors = []
    blobs = []
    offset = 0
    items = list(checkpoint.parameters.items()) + list(checkpoint.optimizer.items())
    for name, array in items:
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<")
        raw = np.ascontiguousarray(array, dtype=dtype).tobytes()
        tensors.append(
            {
                "name": name,
                "dtype": dtype.str,
                "shape": list(array.shape),
                "offset": offset,
                "nbytes": len(raw),
                "group": "optimizer" if name in checkpoint.optimizer else "parameters",
            }
        )
        blobs.append(raw)
        offset += len(raw)

    header = {
        "step": checkpoint.step,
        "stage": checkpoint.stage,
        "fingerprint": checkpoint.fingerprint,
        "model_config": checkpoint.model_config,
        "rng_state": checkpoint.rng_state,
        "best_valid_loss": checkpoint.best_valid_loss,
        "tensors": tensors,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(encoded)))
        f.write(encoded)
        for raw in blobs:
            f.write(raw)
    tmp.replace(path)
    logger.debug("checkpoint saved path=%s tensors=%d", path, len(tensors))


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read a checkpoint written by `save_checkpoint`.

    Raises:
        CheckpointError: If the file is missing, truncated, corrupt or of
            another format version.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"missing checkpoint {path}")
    content = path.read_bytes()
    if len(content) < _PREFIX.size:
        raise CheckpointError(f"{path} is truncated")
    magic, version, header_len = _PREFIX.unpack_from(content)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(
            f"{path} has checkpoint version {version}, expected {VERSION}"
        )
    start = _PREFIX.size + header_len
    try:
        header = json.loads(content[_PREFIX.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path} has a corrupt header: {err}") from err

    parameters, optimizer = {}, {}
    for entry in header.get("tensors", []):
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unsupported dtype {entry['dtype']}")
        begin = start + entry["offset"]
        end = begin + entry["nbytes"]
        if end > len(content):
            raise CheckpointError(f"{path} is truncated at tensor {entry['name']}")
        array = np.frombuffer(content[begin:end], dtype=entry["dtype"]).astype(dtype)
        if array.size != int(np.prod(entry["shape"], dtype=np.int64)):
            raise CheckpointError(f"{path}: size mismatch for {entry['name']}")
        array = array.reshape(entry["shape"])
        target = optimizer if entry.get("group") == "optimizer" else parameters
        target[entry["name"]] = array

    return Checkpoint(
        parameters=parameters,
        optimizer=optimizer,
        step=header["step"],
        fingerprint=header["fingerprint"],
        model_config=header["model_config"],
        stage=header["stage"],
        rng_state=header["rng_state"],
        best_valid_loss=header["best_valid_loss"],
    )
