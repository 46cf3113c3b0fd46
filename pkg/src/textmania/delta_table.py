"""Precomputed lookup table of attribute difference vectors.

File layout (little-endian)::

    b"TMDT" | u16 version | u32 header_len | header (UTF-8 JSON) | float32 blocks

Blocks follow in the order named by ``header["blocks"]``; each is a row-major
float32 matrix whose shape is implied by the header.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import EncoderBackend, embed_text
from .errors import ConfigError, TableFormatError, TextManiaError
from .prompts import TextVariantPair

MAGIC = b"TMDT"
VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")
_F32 = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class DeltaTable:
    backend_id: str
    dim: int
    template_id: str
    class_names: tuple[str, ...]
    combos: tuple[tuple[str, ...], ...]
    matrix: np.ndarray
    build_seed: int = 0
    base_embeddings: np.ndarray | None = None  # e_T0, one row per class
    variant_embeddings: np.ndarray | None = None  # e_T1, aligned with matrix rows
    attr_embeddings: np.ndarray | None = None  # bare attribute phrase, one row per combo
    _class_index: dict = field(default=None, repr=False)
    _combo_index: dict = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "combos", tuple(tuple(c) for c in self.combos))
        n_rows = len(self.class_names) * len(self.combos)
        for name, arr, rows in self._blocks(with_matrix=True):
            if arr.shape != (rows, self.dim):
                raise ConfigError(f"{name} has shape {arr.shape}, expected ({rows}, {self.dim})")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")
            arr.setflags(write=False)
        assert self.matrix.shape[0] == n_rows
        object.__setattr__(self, "_class_index", {c: i for i, c in enumerate(self.class_names)})
        object.__setattr__(self, "_combo_index", {c: i for i, c in enumerate(self.combos)})

    def _blocks(self, with_matrix=False):
        n_rows = len(self.class_names) * len(self.combos)
        out = [("matrix", self.matrix, n_rows)] if with_matrix else []
        for name, rows in (
            ("base_embeddings", len(self.class_names)),
            ("variant_embeddings", n_rows),
            ("attr_embeddings", len(self.combos)),
        ):
            arr = getattr(self, name)
            if arr is not None:
                out.append((name, arr, rows))
        return out

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_combos(self) -> int:
        return len(self.combos)

    @property
    def has_bases(self) -> bool:
        return self.base_embeddings is not None and self.variant_embeddings is not None

    def class_id(self, name: str) -> int:
        return self._class_index[name]

    def combo_id(self, combo: Sequence[str]) -> int:
        return self._combo_index[tuple(combo)]

    def row_index(self, class_id: int, combo_id: int) -> int:
        if not 0 <= class_id < self.num_classes:
            raise KeyError(f"class id {class_id} outside [0, {self.num_classes})")
        if not 0 <= combo_id < self.num_combos:
            raise KeyError(f"combo id {combo_id} outside [0, {self.num_combos})")
        return class_id * self.num_combos + combo_id

    def header(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "dim": self.dim,
            "template_id": self.template_id,
            "class_names": list(self.class_names),
            "combos": [list(c) for c in self.combos],
            "build_seed": self.build_seed,
            "blocks": [name for name, _, _ in self._blocks(with_matrix=True)],
        }

    def to_bytes(self) -> bytes:
        header = json.dumps(self.header(), ensure_ascii=False, sort_keys=True).encode("utf-8")
        parts = [_PREAMBLE.pack(MAGIC, VERSION, len(header)), header]
        parts += [np.ascontiguousarray(arr, dtype=_F32).tobytes() for _, arr, _ in self._blocks(with_matrix=True)]
        return b"".join(parts)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def with_combos(self, keep: Sequence[Sequence[str]]) -> "DeltaTable":
        """Sub-table restricted to ``keep`` combos (order preserved from this table)."""
        keep = {tuple(c) for c in keep}
        idx = [i for i, c in enumerate(self.combos) if c in keep]
        if not idx:
            raise ConfigError("combo filter leaves no combos")
        rows = [ci * self.num_combos + j for ci in range(self.num_classes) for j in idx]
        pick = lambda a, r: None if a is None else np.array(a[r])  # noqa: E731
        return DeltaTable(
            backend_id=self.backend_id,
            dim=self.dim,
            template_id=self.template_id,
            class_names=self.class_names,
            combos=[self.combos[j] for j in idx],
            matrix=np.array(self.matrix[rows]),
            build_seed=self.build_seed,
            base_embeddings=pick(self.base_embeddings, slice(None)),
            variant_embeddings=pick(self.variant_embeddings, rows),
            attr_embeddings=pick(self.attr_embeddings, idx),
        )


def build_table(
    backend: EncoderBackend,
    variants: Sequence[TextVariantPair],
    store_bases: bool = False,
    build_seed: int = 0,
) -> DeltaTable:
    """Embed every (T0, T1) pair and store ``e(T1) - e(T0)`` rows, class-major."""
    if not variants:
        raise ConfigError("no variants to build from")
    templates = {v.template_id for v in variants}
    if len(templates) != 1:
        raise ConfigError(f"variants mix templates {sorted(templates)}")
    class_names = list(dict.fromkeys(v.class_name for v in variants))
    combos = list(dict.fromkeys(v.attr_combo for v in variants))
    expected = [(c, k) for c in class_names for k in combos]
    if [(v.class_name, v.attr_combo) for v in variants] != expected:
        raise ConfigError("variants are not a class-major (class x combo) grid")

    t0_cache: dict[str, np.ndarray] = {}
    deltas, t1_rows = [], []
    for v in variants:
        e0 = t0_cache.get(v.t0)
        if e0 is None:
            e0 = t0_cache[v.t0] = embed_text(backend, v.t0).vector
        e1 = embed_text(backend, v.t1).vector
        if e0.shape != e1.shape or e0.shape != (backend.dim,):
            raise TextManiaError(f"embedding dims disagree: {e0.shape} vs {e1.shape}")
        deltas.append(e1 - e0)
        t1_rows.append(e1)

    bases = variants_emb = attrs = None
    if store_bases:
        first_t0 = {}
        for v in variants:
            first_t0.setdefault(v.class_name, v.t0)
        bases = np.stack([t0_cache[first_t0[c]] for c in class_names])
        variants_emb = np.stack(t1_rows)
        attrs = np.stack([embed_text(backend, " ".join(k)).vector for k in combos])
    return DeltaTable(
        backend_id=backend.id,
        dim=backend.dim,
        template_id=templates.pop(),
        class_names=class_names,
        combos=combos,
        matrix=np.stack(deltas).astype(np.float32),
        build_seed=build_seed,
        base_embeddings=bases,
        variant_embeddings=variants_emb,
        attr_embeddings=attrs,
    )


def lookup(table: DeltaTable, class_id: int, combo_id: int) -> np.ndarray:
    return table.matrix[table.row_index(class_id, combo_id)]


def save_table(table: DeltaTable, path) -> None:
    Path(path).write_bytes(table.to_bytes())


def table_from_bytes(data: bytes) -> DeltaTable:
    if len(data) < _PREAMBLE.size:
        raise TableFormatError("file shorter than preamble", 0)
    magic, version, hlen = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise TableFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise TableFormatError(f"unsupported version {version}", 4)
    pos = _PREAMBLE.size
    if pos + hlen > len(data):
        raise TableFormatError(f"header of {hlen} bytes truncated", pos)
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
        dim = int(header["dim"])
        class_names = header["class_names"]
        combos = [tuple(c) for c in header["combos"]]
        blocks = header["blocks"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise TableFormatError(f"unreadable header: {exc}", pos) from None
    pos += hlen
    n_rows = len(class_names) * len(combos)
    rows_for = {
        "matrix": n_rows,
        "base_embeddings": len(class_names),
        "variant_embeddings": n_rows,
        "attr_embeddings": len(combos),
    }
    if not blocks or blocks[0] != "matrix" or any(b not in rows_for for b in blocks):
        raise TableFormatError(f"bad block list {blocks!r}", _PREAMBLE.size)
    arrays = {}
    for name in blocks:
        nbytes = rows_for[name] * dim * _F32.itemsize
        if pos + nbytes > len(data):
            raise TableFormatError(
                f"block {name!r} needs {rows_for[name]}x{dim} float32 but only "
                f"{len(data) - pos} bytes remain",
                pos,
            )
        arrays[name] = np.frombuffer(data, dtype=_F32, count=rows_for[name] * dim, offset=pos).reshape(
            rows_for[name], dim
        ).astype(np.float32)
        pos += nbytes
    if pos != len(data):
        raise TableFormatError(f"{len(data) - pos} trailing bytes; row count disagrees with header", pos)
    try:
        return DeltaTable(
            backend_id=header["backend_id"],
            dim=dim,
            template_id=header["template_id"],
            class_names=class_names,
            combos=combos,
            build_seed=int(header.get("build_seed", 0)),
            **{name: arrays.get(name) for name in rows_for},
        )
    except (ConfigError, KeyError) as exc:
        raise TableFormatError(f"inconsistent table: {exc}", _PREAMBLE.size) from None


def load_table(path) -> DeltaTable:
    return table_from_bytes(Path(path).read_bytes())
