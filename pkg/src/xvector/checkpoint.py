"""
Self-describing binary checkpoint for SpeakerModel.

Layout: magic | version (u32 LE) | header length (u32 LE) | JSON header |
float64 LE parameter blobs in header order | SHA-256 of everything before.
"""

import hashlib
import json
import logging
import struct
from pathlib import Path

import numpy as np

from features.mfcc import MfccConfig
from utils.errors import CheckpointChecksumError, CheckpointError, CheckpointShapeError, CheckpointVersionError
from utils.retry import retry_with_backoff, reraise_transient
from xvector.model import FORMAT_VERSION, ArchitectureConfig, SpeakerModel

logger = logging.getLogger(__name__)

MAGIC = b"SPKXVEC\x00"
_PREFIX = struct.Struct("<8sII")
_DIGEST_SIZE = 32
_BUFFERS = ("feature_mean", "feature_std")


def _encode(m: SpeakerModel) -> bytes:
    arrays = [(f"buffer.{name}", getattr(m, name)) for name in _BUFFERS]
    arrays += [(f"param.{name}", p.values) for name, p in m.params.items()]
    header = {
        "mfcc_config": m.mfcc_config.model_dump(mode="json"),
        "architecture": m.architecture.model_dump(mode="json"),
        "labels": m.labels,
        "normalization_fitted": m.normalization_fitted,
        "arrays": [{"name": name, "shape": list(values.shape)} for name, values in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, m.version, len(header_bytes)) + header_bytes
    body += b"".join(np.ascontiguousarray(values, dtype="<f8").tobytes() for _, values in arrays)
    return body + hashlib.sha256(body).digest()


@retry_with_backoff
def save_checkpoint(m: SpeakerModel, path: str | Path) -> None:
    """Write the model; the bytes depend only on the model contents."""
    path = Path(path)
    data = _encode(m)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as e:
        reraise_transient(e)
    logger.info(f"✓ Saved checkpoint {path} ({len(data)} bytes)")


def load_checkpoint(path: str | Path) -> SpeakerModel:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointVersionError: unknown format version
        CheckpointChecksumError: truncated or corrupted file
        CheckpointShapeError: arrays inconsistent with the architecture
    """
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a speaker model checkpoint")
    _, version, header_len = _PREFIX.unpack_from(data)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads {FORMAT_VERSION}")
    if len(data) < _PREFIX.size + _DIGEST_SIZE or hashlib.sha256(data[:-_DIGEST_SIZE]).digest() != data[-_DIGEST_SIZE:]:
        raise CheckpointChecksumError(f"{path}: checksum mismatch (truncated or corrupted file)")

    body = data[:-_DIGEST_SIZE]
    header = json.loads(body[_PREFIX.size: _PREFIX.size + header_len].decode("utf-8"))
    model = SpeakerModel.initialize(
        MfccConfig.model_validate(header["mfcc_config"]),
        ArchitectureConfig.model_validate(header["architecture"]),
        header["labels"],
    )

    offset = _PREFIX.size + header_len
    expected_names = [f"buffer.{name}" for name in _BUFFERS] + [f"param.{name}" for name in model.params]
    stored_names = [entry["name"] for entry in header["arrays"]]
    if sorted(stored_names) != sorted(expected_names):
        missing = sorted(set(expected_names) - set(stored_names))
        unknown = sorted(set(stored_names) - set(expected_names))
        raise CheckpointShapeError(
            f"{path}: arrays do not match the architecture (missing {missing}, unknown {unknown})"
        )
    for entry in header["arrays"]:
        kind, name = entry["name"].split(".", 1)
        shape = tuple(entry["shape"])
        expected = getattr(model, name).shape if kind == "buffer" else model.params[name].values.shape
        if shape != expected:
            raise CheckpointShapeError(f"{path}: {entry['name']} has shape {shape}, architecture implies {expected}")
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + size > len(body):
            raise CheckpointShapeError(f"{path}: {entry['name']} runs past the end of the parameter data")
        values = np.frombuffer(body, dtype="<f8", count=size // 8, offset=offset).reshape(shape).astype(np.float64)
        if kind == "buffer":
            setattr(model, name, values)
        else:
            model.params[name].values = values
            model.params[name].grad = np.zeros_like(values)
        offset += size
    if offset != len(body):
        raise CheckpointShapeError(f"{path}: {len(body) - offset} unexpected trailing bytes")

    model.normalization_fitted = header["normalization_fitted"]
    return model
