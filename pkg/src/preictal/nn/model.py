"""Per-sensor CNN: batchnorm, four conv/max-pool blocks, three dense layers.

The forward pass is batchnorm -> 4 x (conv -> ReLU -> maxpool) -> flatten ->
dense -> ReLU -> dense -> ReLU -> dense -> softmax over the five classes.
`backward` runs reverse-mode differentiation through the whole stack and
returns exact gradients of the mean focal loss for every trainable parameter.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dataset import N_CLASSES, LabelClass, Sensor
from ..errors import ShapeError
from .losses import FocalLossConfig, focal_grad_wrt_logits, focal_loss_batch
from .ops import (
    BatchNormParams,
    ConvBlockParams,
    DenseParams,
    batchnorm_forward_with_cache,
    batchnorm_param_grads,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    maxpool1d_backward,
    maxpool1d_with_argmax,
    relu,
    relu_backward,
    softmax,
)

MODEL_MAGIC = b"PSM1"
N_BLOCKS = 4
N_DENSE = 3


@dataclass
class SensorModel:
    sensor: Sensor
    batchnorm: BatchNormParams
    blocks: list[ConvBlockParams]
    dense: list[DenseParams]
    window_samples: int
    mode: str = "inference"
    seed: int = 0

    def __post_init__(self):
        if len(self.blocks) != N_BLOCKS:
            raise ValueError(f"expected {N_BLOCKS} conv blocks")
        if len(self.dense) != N_DENSE:
            raise ValueError(f"expected {N_DENSE} dense layers")
        if self.mode not in ("train", "inference"):
            raise ValueError(f"mode must be 'train' or 'inference', got {self.mode!r}")
        c = self.in_channels
        t = self.window_samples
        for blk in self.blocks:
            if blk.kernels.shape[0] != c:
                raise ShapeError("conv blocks must preserve the input channel count")
            t = -(-t // blk.pool_size)
        flat = c * t
        if self.dense[0].weights.shape[1] != flat:
            raise ShapeError(
                f"first dense layer expects {self.dense[0].weights.shape[1]} inputs "
                f"but the conv stack flattens to {flat}"
            )
        for prev, nxt in zip(self.dense, self.dense[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise ShapeError("dense layer widths do not chain")
        if self.dense[-1].weights.shape[0] != N_CLASSES:
            raise ShapeError(f"final dense layer must output {N_CLASSES} classes")

    @property
    def in_channels(self) -> int:
        return self.batchnorm.gamma.shape[0]


CONV_INIT_NOISE = 0.3


def build_model(
    sensor: Sensor,
    in_channels: int,
    window_samples: int,
    kernel_len: int = 5,
    pool_size: int = 4,
    hidden: tuple[int, int] = (64, 32),
    seed: int = 0,
    bn_epsilon: float = 1e-5,
    bn_momentum: float = 0.1,
) -> SensorModel:
    """Fresh model, deterministically initialized from `seed`.

    Conv kernels start at the identity (center tap passes the input through)
    plus fan-in-scaled uniform noise.  With batchnorm only at the input, a
    plain random init can leave a whole block's ReLU dead at the start — with
    a single channel there is no second path and no gradient ever flows — so
    every block begins as a near-pass-through filter instead.  Dense layers
    use ReLU-gain fan-in-scaled uniform weights; biases start at zero.
    """
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        limit = np.sqrt(6.0 / fan_in)
        return rng.uniform(-limit, limit, size=shape)

    bn = BatchNormParams(
        gamma=np.ones(in_channels),
        beta=np.zeros(in_channels),
        running_mean=np.zeros(in_channels),
        running_var=np.ones(in_channels),
        epsilon=bn_epsilon,
        momentum=bn_momentum,
    )
    center = (kernel_len - 1) // 2
    blocks = []
    for _ in range(N_BLOCKS):
        kernels = CONV_INIT_NOISE * uniform(
            (in_channels, in_channels, kernel_len), in_channels * kernel_len)
        kernels[:, :, center] += np.eye(in_channels)
        blocks.append(ConvBlockParams(kernels=kernels,
                                      bias=np.zeros(in_channels),
                                      pool_size=pool_size))
    t = window_samples
    for _ in range(N_BLOCKS):
        t = -(-t // pool_size)
    widths = [in_channels * t, *hidden, N_CLASSES]
    dense = [
        DenseParams(weights=uniform((widths[i + 1], widths[i]), widths[i]),
                    bias=np.zeros(widths[i + 1]))
        for i in range(N_DENSE)
    ]
    return SensorModel(sensor, bn, blocks, dense, window_samples, seed=seed)


def _check_input(model: SensorModel, xb: np.ndarray) -> None:
    if xb.shape[1:] != (model.in_channels, model.window_samples):
        raise ShapeError(
            f"window shape {xb.shape[1:]} does not match the model's "
            f"({model.in_channels}, {model.window_samples})"
        )


def _forward(model: SensorModel, xb: np.ndarray, keep_cache: bool):
    """Batched forward pass returning logits and, optionally, the tape."""
    _check_input(model, xb)
    h, xhat = batchnorm_forward_with_cache(xb, model.batchnorm, model.mode)
    cache = {"xhat": xhat, "blocks": []} if keep_cache else None
    for blk in model.blocks:
        z = conv1d_forward(h, blk)
        a = relu(z)
        pooled, arg = maxpool1d_with_argmax(a, blk.pool_size)
        if keep_cache:
            cache["blocks"].append({"x": h, "z": z, "arg": arg, "t_in": a.shape[2]})
        h = pooled
    b = h.shape[0]
    flat_shape = h.shape
    h = h.reshape(b, -1)
    dense_x = []
    dense_z = []
    for i, layer in enumerate(model.dense):
        dense_x.append(h)
        z = dense_forward(h, layer)
        dense_z.append(z)
        h = relu(z) if i < N_DENSE - 1 else z
    if keep_cache:
        cache["flat_shape"] = flat_shape
        cache["dense_x"] = dense_x
        cache["dense_z"] = dense_z
    return h, cache


def model_forward(model: SensorModel, window: np.ndarray) -> np.ndarray:
    """Class probabilities for one window [C x T] or a batch [B x C x T]."""
    if window.ndim == 2:
        logits, _ = _forward(model, window[None], keep_cache=False)
        return softmax(logits)[0]
    logits, _ = _forward(model, window, keep_cache=False)
    return softmax(logits)


def mean_focal_loss(
    model: SensorModel,
    windows: np.ndarray,
    labels: np.ndarray,
    cfg: FocalLossConfig,
) -> float:
    logits, _ = _forward(model, windows, keep_cache=False)
    return float(focal_loss_batch(softmax(logits), labels, cfg).mean())


def parameters(model: SensorModel) -> list[tuple[str, np.ndarray]]:
    """Trainable parameters in the documented serialization order."""
    out = [("batchnorm.gamma", model.batchnorm.gamma),
           ("batchnorm.beta", model.batchnorm.beta)]
    for i, blk in enumerate(model.blocks):
        out.append((f"blocks.{i}.kernels", blk.kernels))
        out.append((f"blocks.{i}.bias", blk.bias))
    for i, layer in enumerate(model.dense):
        out.append((f"dense.{i}.weights", layer.weights))
        out.append((f"dense.{i}.bias", layer.bias))
    return out


def set_parameters(model: SensorModel, values: dict[str, np.ndarray]) -> None:
    model.batchnorm.gamma = values["batchnorm.gamma"]
    model.batchnorm.beta = values["batchnorm.beta"]
    for i, blk in enumerate(model.blocks):
        blk.kernels = values[f"blocks.{i}.kernels"]
        blk.bias = values[f"blocks.{i}.bias"]
    for i, layer in enumerate(model.dense):
        layer.weights = values[f"dense.{i}.weights"]
        layer.bias = values[f"dense.{i}.bias"]


def backward(
    model: SensorModel,
    batch: Sequence[tuple[np.ndarray, LabelClass | int]],
    cfg: FocalLossConfig,
) -> dict[str, np.ndarray]:
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    xb = np.stack([w for w, _ in batch])
    yb = np.array([int(lbl) for _, lbl in batch])
    _, grads = backward_batch(model, xb, yb, cfg)
    return grads


def backward_batch(
    model: SensorModel, xb: np.ndarray, yb: np.ndarray, cfg: FocalLossConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean focal loss over the batch and its gradient for every parameter."""
    if model.mode != "train":
        raise ValueError("backward requires the model in train mode")
    logits, cache = _forward(model, xb, keep_cache=True)
    probs = softmax(logits)
    loss = float(focal_loss_batch(probs, yb, cfg).mean())
    delta = focal_grad_wrt_logits(probs, yb, cfg)

    grads: dict[str, np.ndarray] = {}
    for i in range(N_DENSE - 1, -1, -1):
        d_w, d_b, delta = dense_backward(delta, cache["dense_x"][i], model.dense[i])
        grads[f"dense.{i}.weights"] = d_w
        grads[f"dense.{i}.bias"] = d_b
        if i > 0:
            delta = relu_backward(delta, cache["dense_z"][i - 1])

    delta = delta.reshape(cache["flat_shape"])
    for i in range(N_BLOCKS - 1, -1, -1):
        blk_cache = cache["blocks"][i]
        blk = model.blocks[i]
        delta = maxpool1d_backward(delta, blk_cache["arg"], blk.pool_size,
                                   blk_cache["t_in"])
        delta = relu_backward(delta, blk_cache["z"])
        d_k, d_b, delta = conv1d_backward(delta, blk_cache["x"], blk)
        grads[f"blocks.{i}.kernels"] = d_k
        grads[f"blocks.{i}.bias"] = d_b

    d_gamma, d_beta = batchnorm_param_grads(delta, cache["xhat"])
    grads["batchnorm.gamma"] = d_gamma
    grads["batchnorm.beta"] = d_beta
    return loss, grads


# ---------------------------------------------------------------------------
# Weight files: JSON header + raw little-endian float64 blob.  Blob order is
# batchnorm (gamma, beta, running_mean, running_var), blocks 1-4
# (kernels, bias), dense 1-3 (weights, bias).


def _all_arrays(model: SensorModel) -> list[np.ndarray]:
    arrays = [model.batchnorm.gamma, model.batchnorm.beta,
              model.batchnorm.running_mean, model.batchnorm.running_var]
    for blk in model.blocks:
        arrays.extend([blk.kernels, blk.bias])
    for layer in model.dense:
        arrays.extend([layer.weights, layer.bias])
    return arrays


def save_model(model: SensorModel, path: Path | str) -> None:
    header = {
        "format": "preictal-sensor-model",
        "version": 1,
        "sensor": model.sensor.value,
        "in_channels": model.in_channels,
        "window_samples": model.window_samples,
        "kernel_len": model.blocks[0].kernels.shape[2],
        "pool_sizes": [blk.pool_size for blk in model.blocks],
        "hidden": [layer.weights.shape[0] for layer in model.dense[:-1]],
        "bn_epsilon": model.batchnorm.epsilon,
        "bn_momentum": model.batchnorm.momentum,
        "seed": model.seed,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for a in _all_arrays(model))
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)


def load_model(path: Path | str) -> SensorModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ValueError(f"{path} is not a sensor model file")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + hlen].decode())
    if header.get("version") != 1:
        raise ValueError(f"unsupported model file version {header.get('version')}")

    c = header["in_channels"]
    klen = header["kernel_len"]
    bn = BatchNormParams(np.ones(c), np.zeros(c), np.zeros(c), np.ones(c),
                         epsilon=header["bn_epsilon"],
                         momentum=header["bn_momentum"])
    blocks = [
        ConvBlockParams(np.zeros((c, c, klen)), np.zeros(c), pool)
        for pool in header["pool_sizes"]
    ]
    t = header["window_samples"]
    for pool in header["pool_sizes"]:
        t = -(-t // pool)
    widths = [c * t, *header["hidden"], N_CLASSES]
    dense = [DenseParams(np.zeros((widths[i + 1], widths[i])), np.zeros(widths[i + 1]))
             for i in range(N_DENSE)]
    model = SensorModel(Sensor(header["sensor"]), bn, blocks, dense,
                        header["window_samples"], seed=header["seed"])

    values = np.frombuffer(raw[8 + hlen:], dtype="<f8").astype(np.float64)
    offset = 0
    for arr in _all_arrays(model):
        n = arr.size
        if offset + n > values.size:
            raise ValueError("model file blob is shorter than the architecture needs")
        arr[...] = values[offset:offset + n].reshape(arr.shape)
        offset += n
    if offset != values.size:
        raise ValueError("model file blob has trailing data")
    return model
