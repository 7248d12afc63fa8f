"""Small numpy network engine for the actor and critic.

A network is an optional stack of 3x3 convolutions over an image input,
flattened and concatenated with a feature vector (and, for the critic, the
action), followed by dense layers. Parameters live in ``NetworkParams``;
``forward``/``backward`` are plain functions over them.

Tensors are float32 for training; build with ``dtype=np.float64`` for
gradient verification.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, NumericalError, ShapeError, StateError

MAGIC = b"VPOC"
FORMAT_VERSION = 1

ACTIVATIONS = ("tanh", "linear")


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 2
    activation: str = "tanh"


@dataclass(frozen=True)
class DenseSpec:
    in_dim: int
    out_dim: int
    activation: str = "tanh"


@dataclass(frozen=True)
class Architecture:
    """Layer descriptors. ``image_shape`` is ``(C, H, W)`` or ``None`` for no conv front-end."""

    image_shape: tuple[int, int, int] | None
    vector_dim: int
    action_dim: int
    convs: tuple[ConvSpec, ...]
    denses: tuple[DenseSpec, ...]
    output_scale: float = 1.0

    def to_dict(self):
        d = asdict(self)
        d["image_shape"] = list(self.image_shape) if self.image_shape else None
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["image_shape"]) if d["image_shape"] else None,
            int(d["vector_dim"]),
            int(d["action_dim"]),
            tuple(ConvSpec(**c) for c in d["convs"]),
            tuple(DenseSpec(**c) for c in d["denses"]),
            float(d["output_scale"]),
        )

    def tensor_shapes(self):
        shapes = []
        for c in self.convs:
            shapes += [(c.in_channels * c.kernel * c.kernel, c.out_channels), (c.out_channels,)]
        for d in self.denses:
            shapes += [(d.in_dim, d.out_dim), (d.out_dim,)]
        return shapes


def conv_out(n, stride):
    return -(-n // stride)


def conv_spatial_sizes(size, layers=5, stride=2):
    """Spatial extent after each of ``layers`` stride-``stride`` convolutions."""
    out = []
    for _ in range(layers):
        size = conv_out(size, stride)
        out.append(size)
    return out


@dataclass
class NetworkParams:
    arch: Architecture
    tensors: list[np.ndarray]
    # bumped on every in-place update; forward caches remember it
    version: int = 0

    @property
    def dtype(self):
        return self.tensors[0].dtype if self.tensors else np.dtype(np.float32)

    def copy(self):
        return NetworkParams(self.arch, [t.copy() for t in self.tensors], 0)

    def astype(self, dtype):
        return NetworkParams(self.arch, [t.astype(dtype) for t in self.tensors], 0)

    def weight_indices(self):
        return [i for i in range(0, len(self.tensors), 2)]

    def snapshot(self):
        """Immutable copy for readers on other threads."""
        snap = self.copy()
        for t in snap.tensors:
            t.flags.writeable = False
        return snap


def _check_activation(name):
    if name not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {name!r}")


def build_network(image_shape, vector_dim, action_dim, conv_channels, conv_layers, hidden, out_dim, out_activation, output_scale, rng, dtype=np.float32, final_init=3e-3):
    """Assemble an architecture and draw fan-in uniform initial weights."""
    convs = []
    flat = 0
    if image_shape is not None:
        c, h, w = image_shape
        if min(c, h, w) < 1:
            raise ConfigError(f"invalid image shape {image_shape}")
        for _ in range(conv_layers):
            convs.append(ConvSpec(c, conv_channels))
            c, h, w = conv_channels, conv_out(h, 2), conv_out(w, 2)
        flat = c * h * w
    in_dim = flat + vector_dim + action_dim
    if in_dim < 1:
        raise ConfigError("network has no inputs")
    denses = []
    for width in hidden:
        denses.append(DenseSpec(in_dim, width, "tanh"))
        in_dim = width
    _check_activation(out_activation)
    denses.append(DenseSpec(in_dim, out_dim, out_activation))
    arch = Architecture(tuple(image_shape) if image_shape else None, vector_dim, action_dim, tuple(convs), tuple(denses), output_scale)

    tensors = []
    n_layers = len(convs) + len(denses)
    for k, shape_pair in enumerate(zip(arch.tensor_shapes()[::2], arch.tensor_shapes()[1::2])):
        w_shape, b_shape = shape_pair
        bound = final_init if k == n_layers - 1 else 1.0 / math.sqrt(w_shape[0])
        tensors.append(rng.uniform(-bound, bound, size=w_shape).astype(dtype))
        tensors.append(rng.uniform(-bound, bound, size=b_shape).astype(dtype))
    return NetworkParams(arch, tensors)


def build_actor(obs_spec, config, rng, dtype=np.float32):
    """Actor: trunk, two tanh layers, tanh output scaled to ``[-a_max, a_max]``."""
    return build_network(
        obs_spec.image_shape, obs_spec.vector_dim, 0, config.conv_channels, config.conv_layers,
        config.hidden, obs_spec.action_dim, "tanh", config.a_max, rng, dtype,
    )


def build_critic(obs_spec, config, rng, dtype=np.float32):
    """Critic: same trunk, action joins at the first dense layer, scalar linear output."""
    return build_network(
        obs_spec.image_shape, obs_spec.vector_dim, obs_spec.action_dim, config.conv_channels, config.conv_layers,
        config.hidden, 1, "linear", 1.0, rng, dtype,
    )


@dataclass
class NetConfig:
    conv_channels: int = 8
    conv_layers: int = 5
    hidden: tuple[int, ...] = (200, 200)
    a_max: float = 0.15
    critic_l2: float = 1e-2
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.conv_channels < 1 or self.conv_layers < 0 or any(h < 1 for h in self.hidden):
            raise ConfigError("layer sizes must be positive")
        if self.a_max <= 0:
            raise ConfigError("a_max must be positive")
        self.hidden = tuple(self.hidden)
        return self


@dataclass(frozen=True)
class ObsSpec:
    image_shape: tuple[int, int, int] | None
    vector_dim: int
    action_dim: int = 2


# ---------------------------------------------------------------------------
# layers


def _pads(n, stride, k):
    out = conv_out(n, stride)
    total = max((out - 1) * stride + k - n, 0)
    return out, total // 2, total - total // 2


def conv_forward(x, w, b, spec):
    """``x``: (B, C, H, W). Returns output (B, O, Ho, Wo) and im2col columns."""
    k, s = spec.kernel, spec.stride
    bsz, c, h, wd = x.shape
    ho, ph0, ph1 = _pads(h, s, k)
    wo, pw0, pw1 = _pads(wd, s, k)
    xp = np.pad(x, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    # (B, C, Ho, Wo, k, k) -> (B, Ho, Wo, C*k*k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz, ho, wo, c * k * k)
    out = cols @ w + b
    return out.transpose(0, 3, 1, 2), cols


def conv_backward(grad_out, cols, w, x_shape, spec):
    k, s = spec.kernel, spec.stride
    bsz, c, h, wd = x_shape
    ho, ph0, ph1 = _pads(h, s, k)
    wo, pw0, pw1 = _pads(wd, s, k)
    g = grad_out.transpose(0, 2, 3, 1)  # (B, Ho, Wo, O)
    gw = cols.reshape(-1, cols.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    gb = g.sum(axis=(0, 1, 2))
    gcols = (g @ w.T).reshape(bsz, ho, wo, c, k, k)
    gxp = np.zeros((bsz, c, h + ph0 + ph1, wd + pw0 + pw1), dtype=grad_out.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gxp[:, :, ph0 : ph0 + h, pw0 : pw0 + wd], gw, gb


def _activate(z, name):
    return np.tanh(z) if name == "tanh" else z


def _activation_grad(grad, y, name):
    return grad * (1.0 - y * y) if name == "tanh" else grad


@dataclass
class ForwardCache:
    version: int
    params_id: int
    conv: list = field(default_factory=list)
    dense: list = field(default_factory=list)
    image_shape: tuple | None = None
    split: tuple = ()
    output_pre_scale: np.ndarray | None = None


def _as_inputs(arch, inputs, dtype):
    image = inputs.get("image")
    vector = inputs.get("vector")
    action = inputs.get("action")
    if arch.image_shape is not None:
        if image is None:
            raise ShapeError("network expects an image input")
        image = np.asarray(image, dtype=dtype)
        if image.ndim != 4 or tuple(image.shape[1:]) != tuple(arch.image_shape):
            raise ShapeError(f"image shape {image.shape} does not match {arch.image_shape}")
    batch = None
    parts = {}
    for name, arr, dim in (("vector", vector, arch.vector_dim), ("action", action, arch.action_dim)):
        if dim == 0:
            continue
        if arr is None:
            raise ShapeError(f"network expects a {name} input")
        arr = np.asarray(arr, dtype=dtype)
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ShapeError(f"{name} shape {arr.shape} does not match (B, {dim})")
        parts[name] = arr
        batch = arr.shape[0]
    if image is not None:
        batch = image.shape[0]
    return image, parts.get("vector"), parts.get("action"), batch


def forward(params, inputs):
    """Evaluate the network. ``inputs`` maps ``image``/``vector``/``action`` to batched arrays."""
    arch = params.arch
    dtype = params.dtype
    image, vector, action, batch = _as_inputs(arch, inputs, dtype)
    cache = ForwardCache(params.version, id(params))
    t = params.tensors
    pieces = []
    if arch.image_shape is not None:
        x = image
        cache.image_shape = image.shape
        for li, spec in enumerate(arch.convs):
            z, cols = conv_forward(x, t[2 * li], t[2 * li + 1], spec)
            y = _activate(z, spec.activation)
            cache.conv.append((x.shape, cols, y))
            x = y
        pieces.append(x.reshape(batch, -1))
    if vector is not None:
        pieces.append(vector)
    if action is not None:
        pieces.append(action)
    cache.split = tuple(p.shape[1] for p in pieces)
    h = np.concatenate(pieces, axis=1) if len(pieces) > 1 else pieces[0]
    off = 2 * len(arch.convs)
    for li, spec in enumerate(arch.denses):
        z = h @ t[off + 2 * li] + t[off + 2 * li + 1]
        y = _activate(z, spec.activation)
        cache.dense.append((h, y))
        h = y
    return h * dtype.type(arch.output_scale), cache


def backward(params, cache, grad_output):
    """Reverse pass. Returns ``(param_grads, input_grads)``; ``input_grads`` has
    ``vector``/``action``/``image`` entries for the inputs the network takes."""
    if cache.version != params.version or cache.params_id != id(params):
        raise StateError("forward cache is stale: parameters changed since the forward pass")
    arch = params.arch
    t = params.tensors
    grads = [None] * len(t)
    g = np.asarray(grad_output, dtype=params.dtype) * params.dtype.type(arch.output_scale)
    off = 2 * len(arch.convs)
    for li in range(len(arch.denses) - 1, -1, -1):
        spec = arch.denses[li]
        h_in, y = cache.dense[li]
        gz = _activation_grad(g, y, spec.activation)
        grads[off + 2 * li] = h_in.T @ gz
        grads[off + 2 * li + 1] = gz.sum(axis=0)
        g = gz @ t[off + 2 * li].T
    input_grads = {}
    pos = 0
    chunks = []
    for width in cache.split:
        chunks.append(g[:, pos : pos + width])
        pos += width
    ci = 0
    if arch.image_shape is not None:
        gflat = chunks[ci]
        ci += 1
        gx = gflat.reshape(cache.conv[-1][2].shape)
        for li in range(len(arch.convs) - 1, -1, -1):
            spec = arch.convs[li]
            x_shape, cols, y = cache.conv[li]
            gz = _activation_grad(gx, y, spec.activation)
            gx, gw, gb = conv_backward(gz, cols, t[2 * li], x_shape, spec)
            grads[2 * li] = gw
            grads[2 * li + 1] = gb
        input_grads["image"] = gx
    if arch.vector_dim:
        input_grads["vector"] = chunks[ci]
        ci += 1
    if arch.action_dim:
        input_grads["action"] = chunks[ci]
    return grads, input_grads


def l2_penalty(params, lam):
    return 0.5 * lam * sum(float(np.sum(params.tensors[i].astype(np.float64) ** 2)) for i in params.weight_indices())


def add_l2(params, grads, lam):
    """Add ``lam * w`` to every weight gradient (biases untouched)."""
    out = list(grads)
    for i in params.weight_indices():
        out[i] = grads[i] + params.dtype.type(lam) * params.tensors[i]
    return out


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(t) for t in params.tensors], [np.zeros_like(t) for t in params.tensors], lr, beta1, beta2, eps)

    def hyper(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step}


def adam_step(state, params, grads):
    """One bias-corrected Adam update, in place. Rejects non-finite gradients."""
    if len(grads) != len(params.tensors):
        raise ShapeError("gradient list does not match parameters")
    for g, p in zip(grads, params.tensors):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient; update rejected")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, g in enumerate(grads):
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params.tensors[i] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.version += 1
    return params


def polyak_update(target, source, tau):
    """``target <- (1 - tau) * target + tau * source``, elementwise and in place."""
    if target.arch != source.arch or len(target.tensors) != len(source.tensors):
        raise ShapeError("polyak_update needs identical architectures")
    for tt, ts in zip(target.tensors, source.tensors):
        if tt.shape != ts.shape:
            raise ShapeError("polyak_update tensor shape mismatch")
        tt[...] = (1.0 - tau) * tt + tau * ts
    target.version += 1
    return target


def copy_into(target, source):
    if target.arch != source.arch:
        raise ShapeError("copy_into needs identical architectures")
    for tt, ts in zip(target.tensors, source.tensors):
        tt[...] = ts
    target.version += 1


# ---------------------------------------------------------------------------
# checkpoints


def _write_tensor(buf, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise ShapeError("tensor rank too large for checkpoint")
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def save_checkpoint(path, networks, optimizers=None, metadata=None):
    """Write networks, optimizer moments and JSON metadata in the VPOC format."""
    optimizers = optimizers or {}
    manifest = []
    tensors = []
    for name, net in networks.items():
        manifest.append({"kind": "network", "name": name, "arch": net.arch.to_dict(), "count": len(net.tensors)})
        tensors += net.tensors
    for name, opt in optimizers.items():
        manifest.append({"kind": "optimizer", "name": name, "hyper": opt.hyper(), "count": 2 * len(opt.m)})
        tensors += opt.m + opt.v
    meta = {"manifest": manifest, "metadata": metadata or {}}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    for t in tensors:
        _write_tensor(buf, t)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk


@dataclass
class Checkpoint:
    networks: dict
    optimizers: dict
    metadata: dict


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic bytes", offset=0)
    (version,) = struct.unpack("<H", r.take(2, "version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    (meta_len,) = struct.unpack("<I", r.take(4, "metadata length"))
    meta_off = r.pos
    raw = r.take(meta_len, "metadata")
    try:
        meta = json.loads(raw.decode("utf-8"))
        manifest = meta["manifest"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt metadata ({exc})", offset=meta_off) from exc

    def read_tensor():
        off = r.pos
        (rank,) = struct.unpack("<B", r.take(1, "tensor rank"))
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, "tensor extents"))
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(r.take(4 * n, "tensor payload"), dtype="<f4").reshape(shape).astype(np.float32)
        return arr, off

    networks, optimizers = {}, {}
    try:
        for entry in manifest:
            items = [read_tensor() for _ in range(int(entry["count"]))]
            if entry["kind"] == "network":
                arch = Architecture.from_dict(entry["arch"])
                for (arr, off), shape in zip(items, arch.tensor_shapes()):
                    if arr.shape != tuple(shape):
                        raise FormatError(f"tensor shape {arr.shape} disagrees with architecture {shape}", offset=off)
                if len(items) != len(arch.tensor_shapes()):
                    raise FormatError("tensor count disagrees with architecture", offset=r.pos)
                networks[entry["name"]] = NetworkParams(arch, [a for a, _ in items])
            elif entry["kind"] == "optimizer":
                h = entry["hyper"]
                half = len(items) // 2
                optimizers[entry["name"]] = OptimizerState(
                    [a for a, _ in items[:half]], [a for a, _ in items[half:]], h["lr"], h["beta1"], h["beta2"], h["eps"], int(h["step"])
                )
            else:
                raise FormatError(f"unknown manifest entry {entry.get('kind')!r}", offset=meta_off)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"corrupt manifest ({exc})", offset=meta_off) from exc
    if r.pos != len(data):
        raise FormatError("trailing bytes after last tensor", offset=r.pos)
    return Checkpoint(networks, optimizers, meta.get("metadata", {}))


def check_compatible(params, arch):
    """Raise :class:`ShapeError` unless ``params`` has architecture ``arch``."""
    if params.arch != arch:
        raise ShapeError(
            f"checkpoint architecture (image={params.arch.image_shape}, vector={params.arch.vector_dim}) "
            f"does not match configured (image={arch.image_shape}, vector={arch.vector_dim})"
        )
