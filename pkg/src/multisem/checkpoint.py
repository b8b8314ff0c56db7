"""Line-oriented text checkpoints.

::

    FSLCKPT 1
    branches l/l,d/v
    branch_losses 1
    dropout 0.7
    visual_dropout 0
    config <key>=<value>          (zero or more, informational echo)
    tensor <name> <rows> <cols>
    <cols floats>                 (rows lines)
    ...
    end

Values are written with 17 significant digits so reloading is bit-exact.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .data import FLOAT_FMT
from .errors import DataError
from .fusion import FusionModel, parse_branch_config
from .neural import SCALAR_SIGMOID, VECTOR, MlpParams

MAGIC = "FSLCKPT"
VERSION = "1"


def _write_tensor(fh, name, arr):
    mat = np.atleast_2d(arr) if arr.ndim == 2 else arr.reshape(1, -1)
    fh.write(f"tensor {name} {mat.shape[0]} {mat.shape[1]}\n")
    for row in mat:
        fh.write(" ".join(FLOAT_FMT % v for v in row))
        fh.write("\n")


def save_checkpoint(model: FusionModel, path, config_echo: Optional[Dict[str, object]] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{MAGIC} {VERSION}\n")
        fh.write(f"branches {model.config.text or '-'}\n")
        fh.write(f"branch_losses {int(model.config.branch_losses)}\n")
        rates = {a.dropout_rate for a in model.attention} | {s.dropout_rate for s in model.semantic if s}
        fh.write(f"dropout {FLOAT_FMT % (rates.pop() if rates else 0.0)}\n")
        fh.write(f"visual_dropout {FLOAT_FMT % model.visual_head.dropout_rate}\n")
        for key, value in (config_echo or {}).items():
            fh.write(f"config {key}={value}\n")
        for name, arr in model.parameters().items():
            _write_tensor(fh, name, arr)
        fh.write("end\n")


def load_checkpoint(path, expected_branches: Optional[str] = None,
                    expected_branch_losses: Optional[bool] = None) -> FusionModel:
    """Read a checkpoint; optionally insist on a particular branch config."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not a text checkpoint ({exc})") from None
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines) or (pos == len(lines) - 1 and lines[pos] == ""):
            raise DataError(f"{path}: truncated checkpoint (no 'end' marker)")
        pos += 1
        return pos, lines[pos - 1]

    def header(keyword):
        lineno, line = next_line()
        parts = line.split(" ", 1)
        if len(parts) != 2 or parts[0] != keyword:
            raise DataError(f"{path}:{lineno}: expected '{keyword} ...', got {line!r}")
        return lineno, parts[1].strip()

    lineno, version = header(MAGIC)
    if version != VERSION:
        raise DataError(f"{path}:{lineno}: unsupported checkpoint version {version!r}")
    _, branches = header("branches")
    _, losses = header("branch_losses")
    _, dropout = header("dropout")
    _, visual_dropout = header("visual_dropout")
    try:
        config = parse_branch_config(branches, losses == "1")
        dropout_rate, visual_rate = float(dropout), float(visual_dropout)
    except ValueError as exc:
        raise DataError(f"{path}: bad checkpoint header: {exc}") from None
    if expected_branches is not None:
        want = parse_branch_config(expected_branches)
        if want.branches != config.branches:
            raise DataError(f"{path}: checkpoint has branches {config.text!r}, "
                            f"expected {want.text!r}")
    if expected_branch_losses is not None and bool(expected_branch_losses) != config.branch_losses:
        raise DataError(f"{path}: checkpoint branch_losses={int(config.branch_losses)} does not match")

    echo: Dict[str, str] = {}
    tensors: Dict[str, np.ndarray] = {}
    while True:
        lineno, line = next_line()
        if line == "end":
            break
        if line.startswith("config "):
            key, _, value = line[len("config "):].partition("=")
            echo[key] = value
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise DataError(f"{path}:{lineno}: expected 'tensor <name> <rows> <cols>', got {line!r}")
        name = parts[1]
        try:
            rows, cols = int(parts[2]), int(parts[3])
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad tensor shape") from None
        data = np.empty((rows, cols))
        for r in range(rows):
            lineno, row = next_line()
            vals = row.split()
            if len(vals) != cols:
                raise DataError(f"{path}:{lineno}: tensor {name} row has {len(vals)} values, expected {cols}")
            try:
                data[r] = [float(v) for v in vals]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
        tensors[name] = data

    def mlp(prefix, rate, kind):
        try:
            W1, b1 = tensors[f"{prefix}.W1"], tensors[f"{prefix}.b1"]
            W2, b2 = tensors[f"{prefix}.W2"], tensors[f"{prefix}.b2"]
        except KeyError as exc:
            raise DataError(f"{path}: missing tensor {exc}") from None
        if b1.shape[0] != 1 or b2.shape[0] != 1:
            raise DataError(f"{path}: biases of {prefix} must be single rows")
        try:
            return MlpParams(W1, b1[0], W2, b2[0], rate, kind)
        except ValueError as exc:
            raise DataError(f"{path}: {prefix}: {exc}") from None

    visual = mlp("visual", visual_rate, VECTOR)
    semantic = [None if b.input_modality == "visual" else mlp(f"semantic{i}", dropout_rate, VECTOR)
                for i, b in enumerate(config.branches)]
    attention = [mlp(f"attention{i}", dropout_rate, SCALAR_SIGMOID) for i in range(config.k)]
    try:
        model = FusionModel(config, visual, semantic, attention)
    except ValueError as exc:
        raise DataError(f"{path}: inconsistent checkpoint: {exc}") from None
    extra = set(tensors) - set(model.parameters())
    if extra:
        raise DataError(f"{path}: unexpected tensors {sorted(extra)}")
    model.echo = echo
    return model
