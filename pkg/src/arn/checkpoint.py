"""Checkpoint files: a plain-text header followed by little-endian float32 payloads.

    arn-checkpoint 1
    params=<count>
    <name> f32 <d0,d1,...>
    ...
    end
    <raw bytes, tensors in header order>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = "arn-checkpoint 1"


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    lines = [MAGIC, f"params={len(state)}"]
    for name, arr in state.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        lines.append(f"{name} f32 {','.join(str(d) for d in arr.shape) or 'scalar'}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for arr in state.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        count_line = fh.readline().decode("ascii").strip()
        if not count_line.startswith("params="):
            raise CheckpointError(f"{path}: missing params count")
        entries = []
        for _ in range(int(count_line.split("=", 1)[1])):
            name, dtype, shape = fh.readline().decode("ascii").split()
            if dtype != "f32":
                raise CheckpointError(f"{path}: unsupported dtype {dtype}")
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split(","))
            entries.append((name, dims))
        if fh.readline().decode("ascii").strip() != "end":
            raise CheckpointError(f"{path}: malformed header")
        body = fh.read()
    state, offset = {}, 0
    for name, dims in entries:
        nbytes = 4 * int(np.prod(dims))
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated payload at {name}")
        state[name] = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=offset).reshape(dims)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes")
    return state


def load_into(model, path) -> None:
    """Copy checkpoint tensors into ``model.params``; names and shapes must match exactly."""
    state = read_checkpoint(Path(path))
    expected = {k: v.shape for k, v in model.params.items()}
    got = {k: v.shape for k, v in state.items()}
    if set(expected) != set(got):
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        raise CheckpointError(f"parameter names differ (missing {missing}, unexpected {extra})")
    for k, shape in expected.items():
        if got[k] != shape:
            raise CheckpointError(f"{k}: checkpoint shape {got[k]} != model shape {shape}")
    model.load_state(state)
