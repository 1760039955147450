"""The compact two-stage CNN used for every strategy.

conv3x3(1->32) -> relu -> pool -> conv3x3(32->64) -> relu -> pool
-> flatten (64*7*7 = 3136) -> linear(128) -> relu -> linear(2)
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import numeric as nc
from . import rng as rngmod

IMAGE_SIZE = 28
NUM_CLASSES = 2
FLAT_FEATURES = 64 * 7 * 7
HIDDEN_UNITS = 128

CHECKPOINT_MAGIC = b"PXCLMDL1"

# Fixed parameter order; also the checkpoint order.
PARAM_SHAPES = OrderedDict(
    [
        ("conv1.weight", (32, 1, 3, 3)),
        ("conv1.bias", (32,)),
        ("conv2.weight", (64, 32, 3, 3)),
        ("conv2.bias", (64,)),
        ("fc1.weight", (FLAT_FEATURES, HIDDEN_UNITS)),
        ("fc1.bias", (HIDDEN_UNITS,)),
        ("fc2.weight", (HIDDEN_UNITS, NUM_CLASSES)),
        ("fc2.bias", (NUM_CLASSES,)),
    ]
)


class PneumoCnn:
    """Parameter bundle plus forward/backward passes.

    Any object offering ``params``, ``forward``, ``backward``, ``predict`` and
    ``zero_grad`` with the same meaning can stand in for this model in the
    trainer.
    """

    def __init__(self, params: "OrderedDict[str, nc.ParamState]"):
        missing = set(PARAM_SHAPES) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        for name, shape in PARAM_SHAPES.items():
            if params[name].shape != shape:
                raise nc.ShapeError(f"{name} has shape {params[name].shape}, expected {shape}")
        self.params = OrderedDict((name, params[name]) for name in PARAM_SHAPES)
        self._cache = None

    def __getitem__(self, name: str) -> nc.ParamState:
        return self.params[name]

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward(self, batch, keep_cache: bool = False) -> np.ndarray:
        """Logits (Nx2) for a Nx1x28x28 batch of images in [0, 1]."""
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != (1, IMAGE_SIZE, IMAGE_SIZE):
            raise nc.ShapeError(f"expected a Nx1x28x28 batch, got shape {x.shape}")
        p = self.params
        h, c1 = nc.conv2d_forward(x, p["conv1.weight"].value, p["conv1.bias"].value)
        h, r1 = nc.relu_forward(h)
        h, p1 = nc.maxpool2x2_forward(h)
        h, c2 = nc.conv2d_forward(h, p["conv2.weight"].value, p["conv2.bias"].value)
        h, r2 = nc.relu_forward(h)
        h, p2 = nc.maxpool2x2_forward(h)
        pooled_shape = h.shape
        h = h.reshape(h.shape[0], -1)
        h, l1 = nc.linear_forward(h, p["fc1.weight"].value, p["fc1.bias"].value)
        h, r3 = nc.relu_forward(h)
        logits, l2 = nc.linear_forward(h, p["fc2.weight"].value, p["fc2.bias"].value)
        nc._check_finite(logits, "forward")
        self._cache = (c1, r1, p1, c2, r2, p2, pooled_shape, l1, r3, l2) if keep_cache else None
        return logits

    def backward(self, dlogits) -> None:
        """Accumulate parameter gradients from the last cached forward."""
        if self._cache is None:
            raise RuntimeError("backward() needs a preceding forward(keep_cache=True)")
        c1, r1, p1, c2, r2, p2, pooled_shape, l1, r3, l2 = self._cache
        p = self.params
        d, dw, db = nc.linear_backward(dlogits, l2)
        p["fc2.weight"].grad += dw
        p["fc2.bias"].grad += db
        d = nc.relu_backward(d, r3)
        d, dw, db = nc.linear_backward(d, l1)
        p["fc1.weight"].grad += dw
        p["fc1.bias"].grad += db
        d = d.reshape(pooled_shape)
        d = nc.maxpool2x2_backward(d, p2)
        d = nc.relu_backward(d, r2)
        d, dw, db = nc.conv2d_backward(d, c2)
        p["conv2.weight"].grad += dw
        p["conv2.bias"].grad += db
        d = nc.maxpool2x2_backward(d, p1)
        d = nc.relu_backward(d, r1)
        _, dw, db = nc.conv2d_backward(d, c1, need_input_grad=False)
        p["conv1.weight"].grad += dw
        p["conv1.bias"].grad += db
        self._cache = None

    def predict(self, batch) -> np.ndarray:
        """Argmax class per row; exact ties go to class 0."""
        return predict_from_logits(self.forward(batch))


def predict_from_logits(logits) -> np.ndarray:
    # argmax picks the first maximum, so equal logits resolve to class 0
    return np.asarray(logits).argmax(axis=1)


def build_model(seed: int) -> PneumoCnn:
    """He-normal weights (std = sqrt(2 / fan_in)) and zero biases."""
    gen = rngmod.substream(seed, rngmod.INIT)
    params = OrderedDict()
    for name, shape in PARAM_SHAPES.items():
        if name.endswith(".bias"):
            value = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            value = gen.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[name] = nc.ParamState(value)
    return PneumoCnn(params)


def save_checkpoint(model: PneumoCnn, path) -> None:
    """Write parameter values in the PXCLMDL1 layout.

    Per parameter: u32 name length, name (utf-8), u32 rank, u32 extents,
    float64 payload; all little-endian.
    """
    chunks = [CHECKPOINT_MAGIC]
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{p.value.ndim}I", p.value.ndim, *p.value.shape))
        chunks.append(p.value.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> PneumoCnn:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError("bad magic: not a PXCLMDL1 checkpoint")
    pos = 8
    params = OrderedDict()

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError("truncated checkpoint")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        value = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        params[name] = nc.ParamState(value)
    return PneumoCnn(params)
