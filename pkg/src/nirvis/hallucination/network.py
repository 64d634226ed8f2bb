"""Per-channel fully-convolutional NIR -> VIS networks, hand-written backprop and Adam."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .conv import conv_backward, conv_forward

CHANNELS = ("Y", "Cb", "Cr")
WEIGHTS_VERSION = 1
PRELU_INIT = 0.25


@dataclass(frozen=True)
class Architecture:
    kernel: int
    outer: int      # width of the first and the second-to-last layer
    inner: int      # width of the intermediate layers
    n_layers: int   # including the 1-channel output layer
    skip: bool

    def widths(self) -> list[int]:
        return [self.outer] + [self.inner] * (self.n_layers - 3) + [self.outer, 1]


ARCHITECTURES = {
    "Y": Architecture(kernel=11, outer=148, inner=36, n_layers=11, skip=True),
    "Cb": Architecture(kernel=3, outer=66, inner=32, n_layers=7, skip=False),
    "Cr": Architecture(kernel=5, outer=148, inner=48, n_layers=8, skip=False),
}


class WeightsFileError(ValueError):
    """Network weights file is malformed or from an unknown version."""


def prelu(x, a):
    """x where x >= 0, a * x elsewhere (``a`` broadcasts over the channel axis)."""
    return np.where(x >= 0, x, a * x)


def prelu_backward(grad, z, a):
    """Gradients through ``prelu(z, a)`` for channel-last z: (d/dz, d/da)."""
    neg = z < 0
    if a.shape[0] == 1:
        da = np.array([np.sum(grad * z * neg)], dtype=a.dtype)
    else:
        da = np.sum(grad * z * neg, axis=tuple(range(z.ndim - 1))).astype(a.dtype)
    return np.where(neg, a * grad, grad), da


@dataclass
class ConvLayer:
    weight: np.ndarray                 # (out, in, k, k)
    bias: np.ndarray                   # (out,)
    slopes: np.ndarray | None = None   # (out,) or (1,) when shared; None on the last layer

    def __post_init__(self):
        out_ch, _, kh, kw = self.weight.shape
        if kh != kw or kh % 2 != 1:
            raise ValueError("kernels must be square with odd size")
        if self.bias.shape != (out_ch,):
            raise ValueError("bias must have one entry per output channel")

    @property
    def k(self) -> int:
        return self.weight.shape[2]

    @property
    def padding(self) -> int:
        return self.k // 2

    def kernel_hwio(self) -> np.ndarray:
        return np.ascontiguousarray(self.weight.transpose(2, 3, 1, 0))


@dataclass
class HallucinationNet:
    channel: str
    layers: list[ConvLayer]
    skip: bool
    trained: bool = False

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    @property
    def max_kernel(self) -> int:
        return max(layer.k for layer in self.layers)

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays (views; updated in place by the optimiser)."""
        params = []
        for layer in self.layers:
            params += [layer.weight, layer.bias]
            if layer.slopes is not None:
                params.append(layer.slopes)
        return params

    def copy(self) -> "HallucinationNet":
        layers = [ConvLayer(l.weight.copy(), l.bias.copy(),
                            None if l.slopes is None else l.slopes.copy()) for l in self.layers]
        return HallucinationNet(self.channel, layers, self.skip, self.trained)

    def save(self, path: str | os.PathLike) -> None:
        arrays = {
            "format_version": np.int64(WEIGHTS_VERSION),
            "channel": np.array(self.channel),
            "skip": np.bool_(self.skip),
            "trained": np.bool_(self.trained),
            "n_layers": np.int64(len(self.layers)),
        }
        for i, layer in enumerate(self.layers):
            arrays[f"w{i}"] = layer.weight.astype(np.float32)
            arrays[f"b{i}"] = layer.bias.astype(np.float32)
            if layer.slopes is not None:
                arrays[f"a{i}"] = layer.slopes.astype(np.float32)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | os.PathLike, dtype=np.float32) -> "HallucinationNet":
        try:
            with np.load(path, allow_pickle=False) as z:
                data = {key: z[key] for key in z.files}
        except (OSError, ValueError) as exc:
            raise WeightsFileError(f"{path}: not a weights file ({exc})") from exc
        if int(data.get("format_version", -1)) != WEIGHTS_VERSION:
            raise WeightsFileError(f"{path}: unsupported weights version")
        layers = []
        for i in range(int(data["n_layers"])):
            slopes = data.get(f"a{i}")
            layers.append(ConvLayer(data[f"w{i}"].astype(dtype), data[f"b{i}"].astype(dtype),
                                    None if slopes is None else slopes.astype(dtype)))
        return cls(str(data["channel"]), layers, bool(data["skip"]), bool(data["trained"]))


def build_net(channel: str, seed: int = 0, dtype=np.float32, shared_prelu: bool = False,
              arch: Architecture | None = None) -> HallucinationNet:
    """Fresh network for one channel, He-normal weights, zero biases, PReLU slopes 0.25."""
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}")
    arch = arch or ARCHITECTURES[channel]
    rng = np.random.default_rng(seed)
    k = arch.kernel
    layers, cin = [], 1
    widths = arch.widths()
    for i, cout in enumerate(widths):
        std = np.sqrt(2.0 / (cin * k * k))
        weight = (std * rng.standard_normal((cout, cin, k, k))).astype(dtype)
        last = i == len(widths) - 1
        slopes = None if last else np.full(1 if shared_prelu else cout, PRELU_INIT, dtype=dtype)
        layers.append(ConvLayer(weight, np.zeros(cout, dtype=dtype), slopes))
        cin = cout
    return HallucinationNet(channel, layers, arch.skip)


def _to_hwbc(rasters: np.ndarray, dtype) -> np.ndarray:
    r = np.asarray(rasters, dtype=dtype)
    if r.ndim == 2:
        r = r[None]
    return np.ascontiguousarray(r.transpose(1, 2, 0))[..., None]


def forward(net: HallucinationNet, nir: np.ndarray, keep: bool = False):
    """Run the net on one H x W raster or a (B, H, W) stack; output has the input's shape.

    With ``keep`` the intermediate state needed by ``backward`` is returned too.
    """
    nir = np.asarray(nir)
    if min(nir.shape[-2:]) < net.max_kernel:
        raise ValueError(f"input {nir.shape[-2:]} smaller than the {net.max_kernel}px kernel")
    x0 = _to_hwbc(nir, net.dtype)
    x, caches = x0, []
    for layer in net.layers:
        z, conv_cache = conv_forward(x, layer.kernel_hwio(), layer.bias, keep=keep)
        if layer.slopes is not None:
            x = prelu(z, layer.slopes)
        else:
            x = z
        if keep:
            caches.append((conv_cache, z))
    if net.skip:
        x = x + x0
    out = x[..., 0].transpose(2, 0, 1)
    if nir.ndim == 2:
        out = out[0]
    return (out, caches) if keep else out


def euclidean_loss(pred, target) -> float:
    """Half the summed squared error divided by the batch size."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    batch = pred.shape[0] if pred.ndim == 3 else 1
    diff = pred.astype(np.float64) - target
    return 0.5 * float(np.sum(diff * diff)) / batch


def backward(net: HallucinationNet, nir, target):
    """Loss and its gradient for every parameter, in ``net.parameters()`` order."""
    pred, caches = forward(net, nir, keep=True)
    target = np.asarray(target)
    loss = euclidean_loss(pred, target)
    batch = pred.shape[0] if pred.ndim == 3 else 1
    g = ((pred - target) / batch).astype(net.dtype)
    grad = _to_hwbc(g, net.dtype)
    per_layer = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        conv_cache, z = caches[i]
        d_slopes = None
        if layer.slopes is not None:
            grad, d_slopes = prelu_backward(grad, z, layer.slopes)
        dx, dw, db = conv_backward(grad, conv_cache, need_input_grad=i > 0)
        entry = [dw.transpose(3, 2, 0, 1).astype(net.dtype), db.astype(net.dtype)]
        if d_slopes is not None:
            entry.append(d_slopes)
        per_layer.append(entry)
        grad = dx
    grads = [g for entry in reversed(per_layer) for g in entry]
    return loss, grads


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
