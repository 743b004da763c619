"""Architecture zoo and the forward/gradient entry points.

Two families live here.  The closed-form toy models (logistic regression,
single-hidden ReLU, and the linear / nonlinear pooling chains) operate
directly on length-D coordinate vectors understood as spectral coefficients;
no transform is applied inside them.  The MiniCNN family is the trainable
desk-scale stand-in: conv3x3 blocks with circular padding, ReLU, and a
configurable pooling stage, closed by an affine head.

All ``apply`` methods accept extra leading axes on ``x`` (mini-batches) and,
where shapes broadcast, on parameter blocks too (Monte-Carlo draw batches).
Parameter flattening order is the layout order: layers first to last, and
weights before bias inside a layer.  That order is fixed and hashed into the
serialized container.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .rng import Rng
from . import tensorio


class ShapeError(ValueError):
    """Input/parameter shape mismatch; message names the offending layer."""


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class BlockInfo:
    name: str
    shape: tuple
    std: float  # initialization std; 0 means the block starts at zero


class ParamSet:
    """Named parameter blocks with a documented flat order."""

    def __init__(self, blocks: dict, layout: tuple):
        self.layout = tuple(layout)
        expected = [b.name for b in self.layout]
        if list(blocks) != expected:
            raise ShapeError(f"parameter blocks {list(blocks)} != layout {expected}")
        self.blocks = {k: np.asarray(v, dtype=np.float64) for k, v in blocks.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.blocks[b.name].ravel() for b in self.layout])

    @property
    def size(self) -> int:
        return sum(int(np.prod(b.shape)) for b in self.layout)

    @classmethod
    def from_flat(cls, layout, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64).ravel()
        blocks, pos = {}, 0
        for info in layout:
            n = int(np.prod(info.shape)) if info.shape else 1
            blocks[info.name] = vec[pos : pos + n].reshape(info.shape)
            pos += n
        if pos != vec.size:
            raise ShapeError(f"flat vector has {vec.size} entries, layout needs {pos}")
        return cls(blocks, layout)

    def map(self, fn) -> "ParamSet":
        return ParamSet({k: fn(v) for k, v in self.blocks.items()}, self.layout)

    def save(self, path) -> None:
        tensorio.write_tensor(
            path,
            self.flat(),
            extra={
                "kind": "param-set",
                "blocks": [[b.name, list(b.shape)] for b in self.layout],
                "layout_hash": layout_hash(self.layout),
            },
        )


def layout_hash(layout) -> str:
    doc = json.dumps([[b.name, list(b.shape)] for b in layout])
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def load_params(path, spec) -> ParamSet:
    vec, header = tensorio.read_tensor(path)
    layout = spec.layout()
    if header.get("layout_hash") != layout_hash(layout):
        raise ShapeError(
            f"{path}: parameter layout hash {header.get('layout_hash')!r} does not "
            f"match the model spec ({layout_hash(layout)})"
        )
    return ParamSet.from_flat(layout, vec)


# ---------------------------------------------------------------------------
# aliasing operator


@dataclass(frozen=True)
class AliasingOperator:
    """Folds a length-D spectrum into M = D/S bins with weight 1/sqrt(S)."""

    s: int
    d: int

    def __post_init__(self):
        if self.d % self.s != 0:
            raise ShapeError(f"aliasing: D={self.d} is not divisible by S={self.s}")

    @property
    def m(self) -> int:
        return self.d // self.s

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d:
            raise ShapeError(f"aliasing: expected last axis {self.d}, got {x.shape[-1]}")
        folded = x.reshape(x.shape[:-1] + (self.s, self.m)).sum(axis=-2)
        return folded / math.sqrt(self.s)

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape[-1] != self.m:
            raise ShapeError(f"aliasing adjoint: expected last axis {self.m}")
        tiled = np.broadcast_to(
            u[..., None, :], u.shape[:-1] + (self.s, self.m)
        ).reshape(u.shape[:-1] + (self.d,))
        return tiled / math.sqrt(self.s)


def apply_aliasing(op: AliasingOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


def _alias_node(x: Node, s: int, m: int) -> Node:
    lead = x.value.shape[:-1]
    folded = ad.nsum(ad.reshape(x, lead + (s, m)), axis=-2)
    return ad.mul(folded, 1.0 / math.sqrt(s))


# ---------------------------------------------------------------------------
# model specs


_VARIANTS: dict = {}


def _register(cls):
    _VARIANTS[cls.variant] = cls
    return cls


@dataclass(frozen=True)
class ModelSpec:
    """Common surface: layout() for parameters, apply() for the forward pass."""

    def layout(self) -> tuple:
        raise NotImplementedError

    def apply(self, params: dict, x: Node) -> Node:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def n_outputs(self) -> int:
        return 1

    def to_dict(self) -> dict:
        doc = {"format": "nadlab-model", "version": 1, "variant": self.variant}
        for key, val in self.__dict__.items():
            if isinstance(val, np.ndarray):
                val = val.tolist()
            doc[key] = val
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def spec_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def spec_from_dict(doc: dict) -> ModelSpec:
    doc = dict(doc)
    if doc.pop("format", "nadlab-model") != "nadlab-model":
        raise ValueError("not a model spec document")
    version = doc.pop("version", 1)
    if version != 1:
        raise ValueError(f"unsupported model spec version {version}")
    variant = doc.pop("variant")
    try:
        cls = _VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown model variant {variant!r}") from None
    for key in ("m", "widths", "channels", "input_shape"):
        if key in doc and isinstance(doc[key], list):
            if key == "m":
                doc[key] = np.asarray(doc[key], dtype=np.float64)
            else:
                doc[key] = tuple(doc[key])
    return cls(**doc)


def load_spec(path) -> ModelSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


def _check_input(x: Node, expected: tuple, layer: str = "input"):
    got = x.value.shape
    k = len(expected)
    if k == 0 or got[-k:] != tuple(expected):
        raise ShapeError(f"{layer}: expected trailing shape {tuple(expected)}, got {got}")


def _dot_last(a: Node, b: Node) -> Node:
    return ad.nsum(ad.mul(a, b), axis=-1)


def _affine(h: Node, weight: Node, bias: Node) -> Node:
    """h @ weight + bias with the bias broadcast over the row axis.

    Handles parameter blocks that carry extra leading draw axes: the bias
    (..., out) is expanded to (..., 1, out) so it lines up with the
    (..., rows, out) product.
    """
    out = ad.matmul(h, weight)
    bshape = bias.value.shape
    return ad.add(out, ad.reshape(bias, bshape[:-1] + (1, bshape[-1])))


@_register
@dataclass(frozen=True)
class LogisticRegression(ModelSpec):
    """Single linear layer, f(x) = <theta, x>; no directional bias."""

    variant = "logistic-regression"
    d: int
    sigma_theta: float = 1.0

    @property
    def input_shape(self):
        return (self.d,)

    def layout(self):
        return (BlockInfo("theta", (self.d,), self.sigma_theta),)

    def apply(self, params, x):
        _check_input(x, (self.d,), "linear")
        return _dot_last(params["theta"], x)


@_register
@dataclass(frozen=True)
class SingleHiddenReLU(ModelSpec):
    """f(x) = <theta, relu(Phi^T x)>, no biases."""

    variant = "single-hidden-relu"
    d: int
    width: int
    sigma_phi: float = 1.0
    sigma_theta: float = 1.0

    @property
    def input_shape(self):
        return (self.d,)

    def layout(self):
        return (
            BlockInfo("Phi", (self.d, self.width), self.sigma_phi),
            BlockInfo("theta", (self.width,), self.sigma_theta),
        )

    def apply(self, params, x):
        _check_input(x, (self.d,), "hidden")
        lead = x.value.shape[:-1]
        xb = ad.reshape(x, lead + (1, self.d))
        h = ad.relu(ad.matmul(xb, params["Phi"]))
        out = _dot_last(ad.reshape(h, h.value.shape[:-2] + (self.width,)), params["theta"])
        return out


@_register
@dataclass(frozen=True)
class MLP(ModelSpec):
    """ReLU multilayer perceptron with biases and fan-in scaled init."""

    variant = "mlp"
    d: int
    widths: tuple = (64,)
    n_classes: int = 1

    @property
    def input_shape(self):
        return (self.d,)

    @property
    def n_outputs(self):
        return self.n_classes

    def layout(self):
        blocks = []
        fan_in = self.d
        for i, w in enumerate(self.widths):
            blocks.append(BlockInfo(f"fc{i}.weight", (fan_in, w), 1.0 / math.sqrt(fan_in)))
            blocks.append(BlockInfo(f"fc{i}.bias", (w,), 0.0))
            fan_in = w
        blocks.append(
            BlockInfo("head.weight", (fan_in, self.n_classes), 1.0 / math.sqrt(fan_in))
        )
        blocks.append(BlockInfo("head.bias", (self.n_classes,), 0.0))
        return tuple(blocks)

    def apply(self, params, x):
        _check_input(x, (self.d,), "fc0")
        lead = x.value.shape[:-1]
        h = ad.reshape(x, lead + (1, self.d))
        for i in range(len(self.widths)):
            h = ad.relu(_affine(h, params[f"fc{i}.weight"], params[f"fc{i}.bias"]))
        out = _affine(h, params["head.weight"], params["head.bias"])
        out = ad.reshape(out, out.value.shape[:-2] + (self.n_classes,))
        if self.n_classes == 1:
            out = ad.reshape(out, out.value.shape[:-1])
        return out


def _prefilter_array(m, d: int) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (d,):
        raise ShapeError(f"prefilter m must have shape ({d},), got {m.shape}")
    return m


@_register
@dataclass(frozen=True)
class LinearPooling(ModelSpec):
    """f(x) = theta^T A(m * phi * x): prefilter, elementwise filter, aliasing fold."""

    variant = "linear-pooling"
    m: np.ndarray
    s: int
    sigma_phi: float = 1.0
    sigma_theta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.float64))
        AliasingOperator(self.s, self.m.shape[0])  # validates divisibility

    @property
    def d(self) -> int:
        return self.m.shape[0]

    @property
    def input_shape(self):
        return (self.d,)

    def layout(self):
        return (
            BlockInfo("phi", (self.d,), self.sigma_phi),
            BlockInfo("theta", (self.d // self.s,), self.sigma_theta),
        )

    def apply(self, params, x):
        _check_input(x, (self.d,), "prefilter")
        z = ad.mul(ad.mul(params["phi"], Node(self.m)), x)
        pooled = _alias_node(z, self.s, self.d // self.s)
        return _dot_last(pooled, params["theta"])


@_register
@dataclass(frozen=True)
class NonlinearPooling(ModelSpec):
    """f(x) = theta^T A(m * relu(phi * x))."""

    variant = "nonlinear-pooling"
    m: np.ndarray
    s: int
    sigma_phi: float = 1.0
    sigma_theta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.float64))
        AliasingOperator(self.s, self.m.shape[0])

    @property
    def d(self) -> int:
        return self.m.shape[0]

    @property
    def input_shape(self):
        return (self.d,)

    def layout(self):
        return (
            BlockInfo("phi", (self.d,), self.sigma_phi),
            BlockInfo("theta", (self.d // self.s,), self.sigma_theta),
        )

    def apply(self, params, x):
        _check_input(x, (self.d,), "prefilter")
        z = ad.mul(Node(self.m), ad.relu(ad.mul(params["phi"], x)))
        pooled = _alias_node(z, self.s, self.d // self.s)
        return _dot_last(pooled, params["theta"])


@_register
@dataclass(frozen=True)
class MiniCNN(ModelSpec):
    """Small convolutional net: per block conv3x3 (circular pad) + ReLU + pool.

    ``pooling`` is one of "avg", "max", "subsample" or "none"; "none" keeps
    the spatial extent, the others reduce it by ``s`` per block.  The head is
    a single affine layer unless ``fc_hidden`` inserts one hidden ReLU layer.
    """

    variant = "mini-cnn"
    height: int = 32
    width: int = 32
    in_channels: int = 1
    channels: tuple = (8, 16)
    pooling: str = "avg"
    s: int = 2
    n_classes: int = 1
    fc_hidden: int | None = None

    def __post_init__(self):
        if self.pooling not in ("avg", "max", "subsample", "none"):
            raise ValueError(f"unknown pooling kind {self.pooling!r}")
        if self.pooling != "none":
            extent = self.s ** len(self.channels)
            if self.height % extent or self.width % extent:
                raise ShapeError(
                    f"input {self.height}x{self.width} not divisible by total "
                    f"pooling stride {extent}"
                )

    @property
    def input_shape(self):
        return (self.in_channels, self.height, self.width)

    @property
    def n_outputs(self):
        return self.n_classes

    def _feature_extent(self):
        if self.pooling == "none":
            return self.height, self.width
        f = self.s ** len(self.channels)
        return self.height // f, self.width // f

    def layout(self):
        blocks = []
        cin = self.in_channels
        for i, cout in enumerate(self.channels):
            fan_in = cin * 9
            blocks.append(
                BlockInfo(f"conv{i}.weight", (cout, cin, 3, 3), 1.0 / math.sqrt(fan_in))
            )
            blocks.append(BlockInfo(f"conv{i}.bias", (cout,), 0.0))
            cin = cout
        fh, fw = self._feature_extent()
        fan_in = cin * fh * fw
        if self.fc_hidden:
            blocks.append(
                BlockInfo("fc.weight", (fan_in, self.fc_hidden), 1.0 / math.sqrt(fan_in))
            )
            blocks.append(BlockInfo("fc.bias", (self.fc_hidden,), 0.0))
            fan_in = self.fc_hidden
        blocks.append(
            BlockInfo("head.weight", (fan_in, self.n_classes), 1.0 / math.sqrt(fan_in))
        )
        blocks.append(BlockInfo("head.bias", (self.n_classes,), 0.0))
        return tuple(blocks)

    def _conv(self, h: Node, params, i: int, cin: int, cout: int, hw: tuple) -> Node:
        weight, bias = params[f"conv{i}.weight"], params[f"conv{i}.bias"]
        if weight.value.shape[-4:] != (cout, cin, 3, 3):
            raise ShapeError(
                f"conv{i}: weight shape {weight.value.shape} != (..., {cout}, {cin}, 3, 3)"
            )
        hh, ww = hw
        padded = ad.wrap_pad2d(h, 1)
        cols = ad.patches2d(padded, 3)  # (..., H*W, cin*9)
        wlead = weight.value.shape[:-4]
        wmat = ad.transpose_last2(ad.reshape(weight, wlead + (cout, cin * 9)))
        out = _affine(cols, wmat, bias)  # (..., H*W, cout)
        out = ad.transpose_last2(out)
        return ad.reshape(out, out.value.shape[:-1] + (hh, ww))

    def _pool(self, h: Node, hw: tuple) -> Node:
        if self.pooling == "none":
            return h
        hh, ww = hw
        s = self.s
        if self.pooling == "subsample":
            return h[..., ::s, ::s]
        lead = h.value.shape[:-2]
        blocked = ad.reshape(h, lead + (hh // s, s, ww // s, s))
        if self.pooling == "avg":
            return ad.nmean(blocked, axis=(-3, -1))
        # max pooling: flatten each window, ties go to the lowest flat index
        moved = ad.transpose(
            blocked,
            tuple(range(len(lead))) + (len(lead), len(lead) + 2, len(lead) + 1, len(lead) + 3),
        )
        flat = ad.reshape(moved, lead + (hh // s, ww // s, s * s))
        return ad.max_last_axis(flat)

    def apply(self, params, x):
        _check_input(x, self.input_shape, "conv0")
        cin = self.in_channels
        hh, ww = self.height, self.width
        h = x
        for i, cout in enumerate(self.channels):
            h = self._conv(h, params, i, cin, cout, (hh, ww))
            h = ad.relu(h)
            h = self._pool(h, (hh, ww))
            if self.pooling != "none":
                hh, ww = hh // self.s, ww // self.s
            cin = cout
        lead = h.value.shape[:-3]
        feats = ad.reshape(h, lead + (1, cin * hh * ww))
        if self.fc_hidden:
            feats = ad.relu(_affine(feats, params["fc.weight"], params["fc.bias"]))
        out = _affine(feats, params["head.weight"], params["head.bias"])
        out = ad.reshape(out, out.value.shape[:-2] + (self.n_classes,))
        if self.n_classes == 1:
            out = ad.reshape(out, out.value.shape[:-1])
        return out


def strip_pooling(spec: MiniCNN) -> MiniCNN:
    """Same conv stack with pooling replaced by identity and the head
    re-dimensioned to the unpooled feature extent.  Idempotent."""
    if not isinstance(spec, MiniCNN):
        raise TypeError(f"strip_pooling expects a MiniCNN, got {type(spec).__name__}")
    if spec.pooling == "none":
        return spec
    kwargs = dict(spec.__dict__)
    kwargs["pooling"] = "none"
    return MiniCNN(**kwargs)


# ---------------------------------------------------------------------------
# forward / gradient entry points


def _param_nodes(spec: ModelSpec, params: ParamSet) -> dict:
    for info in spec.layout():
        got = params[info.name].shape
        if got[-len(info.shape) :] != info.shape:
            raise ShapeError(
                f"{info.name}: parameter shape {got} does not end with {info.shape}"
            )
    return {k: Node(v) for k, v in params.blocks.items()}


def forward(spec: ModelSpec, params: ParamSet, x: np.ndarray) -> float | np.ndarray:
    """Network output; scalar for single inputs, array for batched ones."""
    out = spec.apply(_param_nodes(spec, params), Node(np.asarray(x, dtype=np.float64)))
    val = out.value
    return float(val) if val.ndim == 0 else val.copy()


def grad_input(spec: ModelSpec, params: ParamSet, x: np.ndarray) -> np.ndarray:
    """Exact reverse-mode gradient of the scalar output w.r.t. x.

    With batched x the rows are independent, so this returns the per-row
    gradients (same shape as x).
    """
    xn = Node(np.asarray(x, dtype=np.float64))
    out = spec.apply(_param_nodes(spec, params), xn)
    (g,) = ad.grad(out, [xn], create_graph=False)
    return g.value


def grad_params(spec: ModelSpec, params: ParamSet, x: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. every parameter, flattened in layout order."""
    pnodes = _param_nodes(spec, params)
    out = spec.apply(pnodes, Node(np.asarray(x, dtype=np.float64)))
    order = [pnodes[b.name] for b in spec.layout()]
    grads = ad.grad(out, order, create_graph=False)
    return np.concatenate([g.value.ravel() for g in grads])


def finite_diff_grad_input(
    spec: ModelSpec, params: ParamSet, x: np.ndarray, h: float
) -> np.ndarray:
    """Central differences at scale h, one batched forward for all 2D probes.

    At coarse h this intentionally disagrees with grad_input on nonlinear
    models: it reads the geometry of f at scale h rather than locally.
    """
    if h <= 0:
        raise ValueError("finite-difference scale h must be positive")
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    eye = np.eye(d).reshape((d,) + x.shape)
    probes = np.concatenate([x[None] + h * eye, x[None] - h * eye], axis=0)
    vals = forward(spec, params, probes)
    return ((vals[:d] - vals[d:]) / (2.0 * h)).reshape(x.shape)


def init_params(spec: ModelSpec, rng: Rng) -> ParamSet:
    """Draw every block from its declared zero-mean Gaussian."""
    blocks = {}
    for info in spec.layout():
        blocks[info.name] = rng.gaussian(info.shape, info.std)
    return ParamSet(blocks, spec.layout())


def forward_linear_pooling(m, s, phi, theta, x) -> float:
    spec = LinearPooling(m=np.asarray(m, dtype=np.float64), s=s)
    params = ParamSet(
        {"phi": np.asarray(phi, float), "theta": np.asarray(theta, float)}, spec.layout()
    )
    return forward(spec, params, x)


def forward_nonlinear_pooling(m, s, phi, theta, x) -> float:
    spec = NonlinearPooling(m=np.asarray(m, dtype=np.float64), s=s)
    params = ParamSet(
        {"phi": np.asarray(phi, float), "theta": np.asarray(theta, float)}, spec.layout()
    )
    return forward(spec, params, x)
