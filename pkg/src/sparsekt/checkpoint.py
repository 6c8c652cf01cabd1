"""Versioned binary checkpoint container.

Layout (little-endian)::

    b"SPKT" | u32 version | u32 header_len | header (canonical JSON, UTF-8)
    u32 tensor_count
    per tensor: u16 name_len | name | u8 dtype (1 = f64) | u8 ndim | u64 * ndim | payload

The header holds the training config (canonical text), dataset id maps,
epoch, best validation AUC, optimizer step and the RNG state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import DatasetMeta

MAGIC = b"SPKT"
VERSION = 1
F64 = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    meta: DatasetMeta
    params: dict[str, np.ndarray]
    moments: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    valid_auc: float | None = None
    rng_state: dict | None = None

    def build_model(self):
        from .model import SparseKT

        model = SparseKT(self.config, self.meta, np.random.default_rng(0))
        model.load_state(self.params)
        return model

    def _header(self) -> bytes:
        header = {
            "config": self.config.canonical(),
            "meta": self.meta.to_dict(),
            "step": self.step,
            "epoch": self.epoch,
            "valid_auc": self.valid_auc,
            "rng_state": self.rng_state,
        }
        return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def _tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"param/{k}", v) for k, v in sorted(self.params.items())]
        for slot in sorted(self.moments):
            out += [(f"{slot}/{k}", v) for k, v in sorted(self.moments[slot].items())]
        return out

    def save(self, path: str | Path) -> None:
        header = self._header()
        chunks = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
        tensors = self._tensors()
        chunks.append(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
            chunks.append(struct.pack("<H", len(raw)) + raw)
            chunks.append(struct.pack("<BB", F64, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            chunks.append(arr.tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        buf = Path(path).read_bytes()
        if buf[:4] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version, hlen = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        header = json.loads(buf[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        params: dict[str, np.ndarray] = {}
        moments: dict[str, dict[str, np.ndarray]] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            dtype, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            if dtype != F64:
                raise CheckpointError(f"{name}: unsupported dtype code {dtype}")
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 8
            arr = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
            pos += size
            slot, _, key = name.partition("/")
            if slot == "param":
                params[key] = arr
            else:
                moments.setdefault(slot, {})[key] = arr
        return cls(
            config=TrainConfig.from_flat(json.loads(header["config"])),
            meta=DatasetMeta.from_dict(header["meta"]),
            params=params,
            moments=moments,
            step=header["step"],
            epoch=header["epoch"],
            valid_auc=header["valid_auc"],
            rng_state=header["rng_state"],
        )
