"""SVLM1 checkpoint container and invariant checks.

Layout, all little-endian::

    b"SVLM1"
    u32 version
    u32 d_v, h_v, d_q, d_t, h_l, classes
    u64 seed
    u32 n_meta, then n_meta x (u16 key length, key, u32 value length, value)   UTF-8
    u32 n_tensors, then per tensor:
        u16 name length, name (UTF-8)
        u8 kind          0 = f64 matrix, 1 = packed bit mask
        u32 rows, u32 cols
        payload          f64 row-major, or ceil(rows*cols/8) bytes (bit i of the
                         row-major flattening in byte i//8, least significant first)

Every layer stores ``<layer>.weight`` (the deployable effective weight, what a
sparse runtime would load), ``<layer>.w0``, ``<layer>.bias`` (1 x out) and
``<layer>.mask``. Attached adapters add ``<layer>.adapter.B`` and
``<layer>.adapter.A``; their mode and each layer's sparsity pattern live in the
metadata block under ``adapter.<layer>`` and ``pattern.<layer>``.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import Adapter, AdapterMode, ModelDims, PrunableLayer, ToyVlm, effective_weight
from .numeric import pack_mask, unpack_mask
from .pruning import nm_violations

CKPT_MAGIC = b"SVLM1"
CKPT_VERSION = 1
KIND_F64, KIND_MASK = 0, 1
_HEAD = struct.Struct("<I6IQ")
_NM = re.compile(r"^(\d+):(\d+)$")


@dataclass
class Checkpoint:
    dims: ModelDims
    seed: int
    tensors: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)
    version: int = CKPT_VERSION

    def model(self) -> ToyVlm:
        """Rebuild the model from ``w0``, biases, masks and adapters."""
        layers = {}
        for name, modality, n_out, n_in in self.dims.layer_specs():
            w0 = self._get(f"{name}.w0", (n_out, n_in))
            mask = self._get(f"{name}.mask", (n_out, n_in)).astype(bool)
            bias = self._get(f"{name}.bias", (1, n_out))[0].copy()
            adapter = None
            if f"{name}.adapter.B" in self.tensors:
                B, A = self.tensors[f"{name}.adapter.B"], self.tensors[f"{name}.adapter.A"]
                mode = AdapterMode(self.metadata.get(f"adapter.{name}", "sparse"))
                adapter = Adapter(name, B.shape[1], B.copy(), A.copy(), mode)
            layers[name] = PrunableLayer(
                name, modality, w0.copy(), mask.copy(), bias, adapter, self.metadata.get(f"pattern.{name}", "")
            )
        return ToyVlm(self.dims, layers, self.seed)

    def _get(self, key: str, shape) -> np.ndarray:
        if key not in self.tensors:
            raise FormatError(f"checkpoint lacks tensor {key!r}")
        t = self.tensors[key]
        if t.shape != tuple(shape):
            raise FormatError(f"tensor {key!r} has shape {t.shape}, expected {tuple(shape)}")
        return t


def to_checkpoint(model: ToyVlm, metadata: dict[str, str] | None = None) -> Checkpoint:
    tensors: dict[str, np.ndarray] = {}
    meta = dict(metadata or {})
    for name, layer in model.layers.items():
        tensors[f"{name}.weight"] = effective_weight(layer)
        tensors[f"{name}.w0"] = layer.w0
        tensors[f"{name}.bias"] = layer.bias[None, :]
        tensors[f"{name}.mask"] = layer.mask
        if layer.pattern:
            meta[f"pattern.{name}"] = layer.pattern
        if layer.adapter is not None:
            tensors[f"{name}.adapter.B"] = layer.adapter.B
            tensors[f"{name}.adapter.A"] = layer.adapter.A
            meta[f"adapter.{name}"] = layer.adapter.mode.value
    return Checkpoint(model.dims, model.seed, tensors, meta)


def _str(s: str, width: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(f"<{width}", len(raw)) + raw


def encode(ckpt: Checkpoint) -> bytes:
    d = ckpt.dims
    parts = [CKPT_MAGIC, _HEAD.pack(ckpt.version, d.d_v, d.h_v, d.d_q, d.d_t, d.h_l, d.classes, ckpt.seed)]
    parts.append(struct.pack("<I", len(ckpt.metadata)))
    for key in sorted(ckpt.metadata):
        parts.append(_str(key, "H") + _str(str(ckpt.metadata[key]), "I"))
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, t in ckpt.tensors.items():
        rows, cols = t.shape
        if t.dtype == bool:
            parts.append(_str(name, "H") + struct.pack("<BII", KIND_MASK, rows, cols) + pack_mask(t))
        else:
            parts.append(_str(name, "H") + struct.pack("<BII", KIND_F64, rows, cols) + np.asarray(t, "<f8").tobytes())
    return b"".join(parts)


def decode(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    if raw[:5] != CKPT_MAGIC:
        raise FormatError(f"{source}: not an SVLM1 checkpoint")
    try:
        off = 5
        version, d_v, h_v, d_q, d_t, h_l, classes, seed = _HEAD.unpack_from(raw, off)
        off += _HEAD.size
        if version != CKPT_VERSION:
            raise FormatError(f"{source}: unsupported checkpoint version {version}")

        def take_str(width: str):
            nonlocal off
            (n,) = struct.unpack_from(f"<{width}", raw, off)
            off += struct.calcsize(width)
            if off + n > len(raw):
                raise FormatError(f"{source}: truncated string")
            s = raw[off : off + n].decode("utf-8")
            off += n
            return s

        (n_meta,) = struct.unpack_from("<I", raw, off)
        off += 4
        meta = {}
        for _ in range(n_meta):
            key = take_str("H")
            meta[key] = take_str("I")
        (n_tensors,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors = {}
        for _ in range(n_tensors):
            name = take_str("H")
            kind, rows, cols = struct.unpack_from("<BII", raw, off)
            off += 9
            if kind == KIND_F64:
                size = rows * cols * 8
                if off + size > len(raw):
                    raise FormatError(f"{source}: truncated tensor {name!r}")
                tensors[name] = np.frombuffer(raw, "<f8", rows * cols, off).astype(np.float64).reshape(rows, cols)
            elif kind == KIND_MASK:
                size = (rows * cols + 7) // 8
                if off + size > len(raw):
                    raise FormatError(f"{source}: truncated mask {name!r}")
                tensors[name] = unpack_mask(raw[off : off + size], rows, cols)
            else:
                raise FormatError(f"{source}: unknown tensor kind {kind} for {name!r}")
            off += size
        if off != len(raw):
            raise FormatError(f"{source}: {len(raw) - off} trailing bytes")
        dims = ModelDims(d_v, h_v, d_q, d_t, h_l, classes)
    except struct.error as exc:
        raise FormatError(f"{source}: truncated checkpoint ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise FormatError(f"{source}: bad UTF-8 in names ({exc})") from exc
    return Checkpoint(dims, seed, tensors, meta, version)


def save_checkpoint(obj: ToyVlm | Checkpoint, path, metadata: dict[str, str] | None = None) -> Checkpoint:
    ckpt = obj if isinstance(obj, Checkpoint) else to_checkpoint(obj, metadata)
    Path(path).write_bytes(encode(ckpt))
    return ckpt


def read_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes(), str(path))


def load_checkpoint(path) -> ToyVlm:
    return read_checkpoint(path).model()


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class VerifyReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        return [f"{'PASS' if c.passed else 'FAIL'} {c.name}" + (f": {c.detail}" if c.detail else "") for c in self.checks]


def verify(ckpt: Checkpoint) -> VerifyReport:
    """Finiteness, mask integrity, N:M blocks and stored-vs-rebuilt consistency."""
    checks = []
    bad = [name for name, t in ckpt.tensors.items() if t.dtype != bool and not np.all(np.isfinite(t))]
    checks.append(Check("finite", not bad, ", ".join(bad)))
    try:
        model = ckpt.model()
    except (FormatError, ValueError) as exc:
        checks.append(Check("structure", False, str(exc)))
        return VerifyReport(tuple(checks))
    checks.append(Check("structure", True))
    for name, layer in model.layers.items():
        stored = ckpt._get(f"{name}.weight", layer.shape)
        hits = np.argwhere(~layer.mask & (stored != 0.0))
        detail = f"{len(hits)} nonzero at masked positions, first {name}[{hits[0][0]}, {hits[0][1]}]" if len(hits) else ""
        checks.append(Check(f"mask {name}", not len(hits), detail))
        same = np.array_equal(stored, effective_weight(layer))
        if not same:
            i, j = np.argwhere(stored != effective_weight(layer))[0]
            detail = f"stored weight differs from rebuilt at {name}[{i}, {j}]"
        checks.append(Check(f"consistent {name}", same, "" if same else detail))
        m = _NM.match(layer.pattern)
        if m:
            n, block = int(m.group(1)), int(m.group(2))
            viol = nm_violations(stored, n, block)
            detail = f"{len(viol)} blocks short of {n} zeros, first {name} row {viol[0][0]} block {viol[0][1]}" if viol else ""
            checks.append(Check(f"{n}:{block} {name}", not viol, detail))
    return VerifyReport(tuple(checks))
