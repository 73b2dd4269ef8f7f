"""Named-tensor checkpoint codec.

On disk a checkpoint is two files::

    <name>.manifest.json   names, shapes, byte offsets, metadata
    <name>.weights.bin     b"RNTFORGE" + u32 version + little-endian float32 data

Feature files reuse the same container with a single tensor.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CodecError, IntegrityError, MetaError, TruncatedError, VersionError
from .arch import MODEL_KINDS, expected_shapes

MAGIC = b"RNTFORGE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI")


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tensors = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in self.tensors.items()}

    @property
    def kind(self) -> str | None:
        return self.meta.get("kind")

    @property
    def tag(self) -> str | None:
        return self.meta.get("tag")

    @property
    def labels(self) -> list[str]:
        return list(self.meta.get("labels", []))

    def params64(self) -> dict[str, np.ndarray]:
        return {k: v.astype(np.float64) for k, v in self.tensors.items()}

    def equals(self, other: "Checkpoint") -> bool:
        if self.meta != other.meta or self.tensors.keys() != other.tensors.keys():
            return False
        return all(self.tensors[k].shape == other.tensors[k].shape
                   and self.tensors[k].tobytes() == other.tensors[k].tobytes()
                   for k in self.tensors)


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    for suffix in (".manifest.json", ".weights.bin"):
        if p.name.endswith(suffix):
            p = p.with_name(p.name[: -len(suffix)])
    return p.with_name(p.name + ".manifest.json"), p.with_name(p.name + ".weights.bin")


def validate_meta(tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Check label-inventory and architecture consistency of a model checkpoint."""
    labels = meta.get("labels")
    if labels is not None:
        if len(set(labels)) != len(labels):
            raise MetaError("label inventory contains duplicates")
    kind = meta.get("kind")
    if kind not in MODEL_KINDS:
        return
    if labels is None or "arch" not in meta:
        raise MetaError(f"{kind} checkpoint lacks labels or arch metadata")
    if kind == "rnnt":
        blank = meta.get("blank_index")
        if not isinstance(blank, int) or not 0 <= blank < len(labels):
            raise MetaError(f"invalid blank index {blank!r}")
    expected = expected_shapes(kind, meta["arch"], len(labels))
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise MetaError(f"tensor set does not match {kind} architecture (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise MetaError(f"{name}: shape {tensors[name].shape} inconsistent with metadata {shape}")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    validate_meta(ckpt.tensors, ckpt.meta)
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION)]
    offset = _HEADER.size
    for name in sorted(ckpt.tensors):
        arr = ckpt.tensors[name].astype("<f4", copy=False)
        data = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = {"format": "rntforge", "version": FORMAT_VERSION, "meta": ckpt.meta, "tensors": entries}
    blob_path.write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True, ensure_ascii=False) + "\n",
                             encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    manifest_path, blob_path = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        blob = blob_path.read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise CodecError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise TruncatedError(f"{blob_path}: shorter than the blob header")
    magic, version = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CodecError(f"{blob_path}: bad magic {magic!r}")
    if version != FORMAT_VERSION or manifest.get("version") != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}/{manifest.get('version')}, "
                           f"expected {FORMAT_VERSION}")
    tensors = {}
    for entry in manifest.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        start, nbytes = entry["offset"], entry["nbytes"]
        if name in tensors:
            raise IntegrityError(f"duplicate tensor name {name}")
        if int(np.prod(shape)) * 4 != nbytes:
            raise IntegrityError(f"{name}: declared shape {shape} needs {int(np.prod(shape)) * 4} bytes, "
                                 f"manifest says {nbytes}")
        if start < _HEADER.size or start + nbytes > len(blob):
            raise TruncatedError(f"{name}: bytes [{start}, {start + nbytes}) beyond blob of {len(blob)}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=start).reshape(shape).copy()
    meta = manifest.get("meta", {})
    validate_meta(tensors, meta)
    return Checkpoint(tensors, meta)


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    save_checkpoint(Checkpoint(tensors, dict(meta or {}, kind="tensors")), path)


def load_tensors(path) -> dict[str, np.ndarray]:
    return load_checkpoint(path).tensors
