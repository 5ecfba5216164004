"""Model checkpoints.

Layout::

    CDGC-CHECKPOINT 1\n
    seed <int>\n
    config <byte length>\n
    <backbone config, canonical key=value text>
    tensor <name> <ndim> <dim_0> ... <dim_{ndim-1}>\n     # one per tensor
    ...
    end\n
    <tensor data, little-endian float64, in the order listed>

Tensors are the trainable parameters in declaration order, then the BN
running statistics.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from cdgc.errors import FormatError
from cdgc.graph import PartitionedAdjacency, SkeletonGraph
from cdgc.network.config import BackboneConfig
from cdgc.network.model import Model, build_model

MAGIC = "CDGC-CHECKPOINT"
VERSION = 1
_LE_F64 = np.dtype("<f8")


def _tensors(model: Model) -> list[tuple[str, np.ndarray]]:
    return [(p.name, p.data) for p in model.parameters()] + model.buffers()


def save_checkpoint(model: Model, path) -> None:
    config = model.config.to_text().encode()
    head = [f"{MAGIC} {VERSION}", f"seed {model.seed}", f"config {len(config)}"]
    tensors = _tensors(model)
    lines = [f"tensor {name} {arr.ndim} {' '.join(str(d) for d in arr.shape)}".rstrip() for name, arr in tensors]
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode())
        fh.write(config)
        fh.write(("\n".join(lines + ["end"]) + "\n").encode())
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())


def _readline(fh, path) -> str:
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise FormatError("truncated checkpoint header", None, str(path))
    return line[:-1].decode()


def load_checkpoint(path, graph: SkeletonGraph | PartitionedAdjacency) -> Model:
    """Rebuild the model from its stored config and overwrite every tensor."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _readline(fh, path).split()
        if len(magic) != 2 or magic[0] != MAGIC:
            raise FormatError("not a checkpoint file", 1, str(path))
        if magic[1] != str(VERSION):
            raise FormatError(f"unsupported checkpoint version {magic[1]}", 1, str(path))
        seed_line = _readline(fh, path).split()
        cfg_line = _readline(fh, path).split()
        if len(seed_line) != 2 or seed_line[0] != "seed" or len(cfg_line) != 2 or cfg_line[0] != "config":
            raise FormatError("malformed checkpoint header", 2, str(path))
        config = BackboneConfig.from_text(fh.read(int(cfg_line[1])).decode())
        specs = []
        while True:
            toks = _readline(fh, path).split()
            if toks == ["end"]:
                break
            if len(toks) < 3 or toks[0] != "tensor":
                raise FormatError(f"bad tensor line {' '.join(toks)!r}", None, str(path))
            specs.append((toks[1], tuple(int(d) for d in toks[3:])))
        model = build_model(config, graph, int(seed_line[1]))
        expected = _tensors(model)
        if [s[0] for s in specs] != [name for name, _ in expected]:
            raise FormatError("checkpoint tensors do not match the model built from its config", None, str(path))
        for (name, shape), (_, target) in zip(specs, expected):
            if shape != target.shape:
                raise FormatError(f"{name}: stored shape {shape}, model has {target.shape}", None, str(path))
            count = int(np.prod(shape, dtype=np.int64))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise FormatError(f"{name}: tensor data truncated", None, str(path))
            target[...] = np.frombuffer(raw, dtype=_LE_F64).reshape(shape)
        if fh.read(1):
            raise FormatError("trailing bytes after tensor data", None, str(path))
    return model
