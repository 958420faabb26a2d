"""Small residual CNNs used as data-space correction and image-space update.

A net is a stack of same-padded conv layers with leaky-ReLU between them.
The output is one channel; if ``residual_channel`` is set, that input
channel is added to it. The last layer is zero-initialised, so a fresh net
returns its residual channel unchanged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import (
    Tensor,
    as_tensor,
    conv2d,
    conv2d_array,
    conv2d_transpose_array,
    leaky_relu,
    tsqrt,
    tsum,
)

__all__ = [
    "ConvLayer",
    "NetParams",
    "init_net",
    "init_contractive_net",
    "zero_net",
    "forward_net",
    "net_apply",
    "spectral_normalize",
    "conv_operator_norm",
    "lipschitz_estimate",
    "save_nets",
    "load_nets",
]

SN_ITERS = 5


@dataclass
class ConvLayer:
    weight: np.ndarray  # (cout, cin, k, k)
    bias: np.ndarray  # (cout,)
    u: np.ndarray | None = None  # persistent power-iteration vector, (cin, h, w)

    @property
    def cin(self) -> int:
        return self.weight.shape[1]

    @property
    def cout(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


@dataclass
class NetParams:
    layers: list[ConvLayer]
    slope: float = 0.2
    residual_channel: int | None = 0
    spectral_norm: bool = False
    sn_shape: tuple[int, int] | None = None

    @property
    def in_channels(self) -> int:
        return self.layers[0].cin

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def set_arrays(self, arrays) -> None:
        arrays = list(arrays)
        for i, layer in enumerate(self.layers):
            layer.weight, layer.bias = arrays[2 * i], arrays[2 * i + 1]

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "NetParams":
        layers = [
            ConvLayer(l.weight.copy(), l.bias.copy(), None if l.u is None else l.u.copy())
            for l in self.layers
        ]
        return replace(self, layers=layers)


def init_net(in_channels: int, hidden: int = 16, n_layers: int = 3, *, seed=0,
             slope: float = 0.2, residual_channel: int | None = 0, kernel: int = 3,
             spectral_norm: bool = False, sn_shape=None, zero_last: bool = True) -> NetParams:
    """Kaiming fan-in initialisation; zero last layer makes the net an identity."""
    rng = np.random.default_rng(seed)
    chans = [in_channels] + [hidden] * (n_layers - 1) + [1]
    layers = []
    for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
        std = np.sqrt(2.0 / (cin * kernel * kernel))
        w = rng.standard_normal((cout, cin, kernel, kernel)) * std
        if zero_last and i == n_layers - 1:
            w = np.zeros_like(w)
        layers.append(ConvLayer(w, np.zeros(cout)))
    return NetParams(layers, slope, residual_channel, spectral_norm,
                     None if sn_shape is None else tuple(sn_shape))


def init_contractive_net(in_channels: int, hidden: int = 16, n_layers: int = 3, *, seed=0,
                         slope: float = 0.2, kernel: int = 3, sn_shape=None,
                         identity_channel: int = 0) -> NetParams:
    """Spectrally normalised net without skip connection (Lipschitz bound 1).

    Weights start as a small Kaiming draw plus a centre tap that routes
    ``identity_channel`` through the first hidden channel of every layer, so
    the fresh net is close to a leaky-ReLU of that channel.
    """
    p = init_net(in_channels, hidden, n_layers, seed=seed, slope=slope, residual_channel=None,
                 kernel=kernel, spectral_norm=True, sn_shape=sn_shape, zero_last=False)
    c = kernel // 2
    for i, layer in enumerate(p.layers):
        layer.weight *= 0.1
        layer.weight[0, identity_channel if i == 0 else 0, c, c] = 1.0
    return p


def zero_net(in_channels: int, residual_channel: int | None = None) -> NetParams:
    """A single conv layer with zero weights: outputs 0 (or the residual channel)."""
    return NetParams([ConvLayer(np.zeros((1, in_channels, 3, 3)), np.zeros(1))],
                     residual_channel=residual_channel)


def _power_vector(layer: ConvLayer, shape) -> np.ndarray:
    if layer.u is None or layer.u.shape != (layer.cin, *shape):
        # fresh vector (new layer or loaded checkpoint): converge it once
        u = np.random.default_rng(1234).standard_normal((layer.cin, *shape))
        layer.u = conv_operator_norm(layer.weight, shape, 500, u)[1]
    return layer.u


def conv_operator_norm(weight: np.ndarray, shape, iters: int = 50, u=None):
    """Power-iteration estimate of the conv map's operator norm on ``shape``."""
    if u is None:
        u = np.random.default_rng(0).standard_normal((weight.shape[1], *shape))
    u = u / np.linalg.norm(u)
    sigma = 0.0
    for _ in range(iters):
        v = conv2d_array(u, weight)
        sigma = np.linalg.norm(v)
        w = conv2d_transpose_array(v, weight)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0, u
        u = w / nw
    return float(np.linalg.norm(conv2d_array(u, weight))), u


def spectral_normalize(layer: ConvLayer, shape, iters: int = SN_ITERS) -> ConvLayer:
    """Return a copy with weight divided by its estimated operator norm.

    The power-iteration vector persists on ``layer`` between calls. A zero
    weight is returned unchanged.
    """
    if not np.any(layer.weight):
        return layer
    sigma, u = conv_operator_norm(layer.weight, shape, iters, _power_vector(layer, shape))
    layer.u = u
    if sigma == 0:
        return layer
    return ConvLayer(layer.weight / sigma, layer.bias.copy(), u.copy())


def _sn_weight(layer: ConvLayer, w: Tensor, shape) -> Tensor:
    u = _power_vector(layer, shape)
    v = conv2d(Tensor(u), w)
    sigma = tsqrt(tsum(v * v))
    if sigma.value == 0:
        return w
    return w / sigma


def refresh_spectral(p: NetParams, shape=None, iters: int = SN_ITERS) -> None:
    """Advance each layer's persistent power-iteration vector."""
    shape = shape or p.sn_shape
    for layer in p.layers:
        if np.any(layer.weight):
            _, layer.u = conv_operator_norm(layer.weight, shape, iters, _power_vector(layer, shape))


def forward_net(p: NetParams, inp, leaves: list[Tensor] | None = None) -> Tensor:
    """Evaluate the net on a (cin, h, w) stack; returns an (h, w) tensor.

    ``leaves`` are tensors standing in for ``p.arrays()`` (for training);
    without them the parameters enter as constants.
    """
    inp = as_tensor(inp)
    if inp.ndim != 3 or inp.shape[0] != p.in_channels:
        raise ValueError(f"net expects ({p.in_channels}, h, w) input, got {inp.shape}")
    params = leaves if leaves is not None else [Tensor(a) for a in p.arrays()]
    shape = tuple(inp.shape[1:])
    h = inp
    n = len(p.layers)
    for i, layer in enumerate(p.layers):
        w, b = params[2 * i], params[2 * i + 1]
        if p.spectral_norm:
            w = _sn_weight(layer, w, p.sn_shape or shape)
        h = conv2d(h, w, b)
        if i < n - 1:
            h = leaky_relu(h, p.slope)
    out = h[0]
    if p.residual_channel is not None:
        out = out + inp[p.residual_channel]
    return out


def net_apply(p: NetParams, inp) -> np.ndarray:
    """Tape-free evaluation, returns a plain array."""
    return forward_net(p, Tensor(np.asarray(inp, dtype=np.float64))).value


def lipschitz_estimate(p: NetParams, shape, probes: int = 200, seed: int = 0,
                       scale: float = 1.0) -> float:
    """Largest observed ``|net(a) - net(b)| / |a - b|`` over random probe pairs.

    Pairs differ in every channel, in a single channel, or by a small local
    perturbation. The result is a lower bound on the Lipschitz constant.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    cin = p.in_channels
    best = 0.0
    for i in range(probes):
        a = rng.standard_normal((cin, *shape)) * scale
        kind = i % 3
        if kind == 0:
            b = rng.standard_normal((cin, *shape)) * scale
        elif kind == 1:
            b = a.copy()
            b[rng.integers(cin)] += rng.standard_normal(shape) * scale
        else:
            b = a + 1e-3 * scale * rng.standard_normal(a.shape)
        d = np.linalg.norm(a - b)
        if d == 0:
            continue
        best = max(best, np.linalg.norm(net_apply(p, a) - net_apply(p, b)) / d)
    return float(best)


_NET_MAGIC = b"PATN"
_NET_VERSION = 1


def save_nets(path, nets: list[NetParams]) -> None:
    """Write nets to a PATN checkpoint (layout documented in the README)."""
    buf = bytearray(_NET_MAGIC)
    buf += struct.pack("<II", _NET_VERSION, len(nets))
    for p in nets:
        flags = 1 if p.spectral_norm else 0
        res = -1 if p.residual_channel is None else p.residual_channel
        buf += struct.pack("<IiIf", len(p.layers), res, flags, p.slope)
        for layer in p.layers:
            buf += struct.pack("<IIII", layer.cin, layer.cout, layer.kernel, 1)
        for layer in p.layers:
            buf += np.ascontiguousarray(layer.weight, dtype="<f4").tobytes()
            buf += np.ascontiguousarray(layer.bias, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_nets(path) -> list[NetParams]:
    raw = Path(path).read_bytes()
    if raw[:4] != _NET_MAGIC:
        raise IOError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != _NET_VERSION:
        raise IOError(f"{path}: unsupported version {version}")
    off = 12
    nets = []
    for _ in range(count):
        n_layers, res, flags, slope = struct.unpack_from("<IiIf", raw, off)
        off += 16
        heads = []
        for _ in range(n_layers):
            heads.append(struct.unpack_from("<IIII", raw, off))
            off += 16
        layers = []
        for cin, cout, k, _ in heads:
            nw = cout * cin * k * k
            w = np.frombuffer(raw, "<f4", nw, off).reshape(cout, cin, k, k).astype(np.float64)
            off += 4 * nw
            b = np.frombuffer(raw, "<f4", cout, off).astype(np.float64)
            off += 4 * cout
            layers.append(ConvLayer(w, b))
        nets.append(NetParams(layers, float(slope), None if res < 0 else res, bool(flags & 1)))
    if off != len(raw):
        raise IOError(f"{path}: {len(raw) - off} trailing bytes")
    return nets
