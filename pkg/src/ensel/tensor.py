"""Dense-tensor math for the tiny CNNs: exact forward and backward passes.

There is no general autodiff graph. The two shipped architectures (lesion
detector and lesion classifier) are fixed layer sequences, each layer with a
hand-derived backward pass, which keeps the surface small and the gradients
exactly checkable against finite differences.

Reproducibility rules baked into this module:

* all math is float64;
* convolution accumulates in a fixed order (input-channel, kernel row,
  kernel column, then bias), so results are bit-identical to a naive
  quadruple-loop evaluation;
* dense layers accumulate over the input index in order;
* max-pool ties break on the first occurrence in row-major window order;
* nothing here routes through BLAS matmuls, so outputs do not depend on
  thread count or vendor libraries.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError, StateError
from .errors import InvalidArgument
from .rng import Rng


class Tensor:
    """Row-major float64 array with an explicit shape.

    Invariants: every dimension is positive, `data` has exactly
    `prod(shape)` entries, and all values are finite.
    """

    __slots__ = ("array",)

    def __init__(self, values, shape: tuple[int, ...] | None = None):
        arr = np.array(values, dtype=np.float64, order="C")
        if shape is not None:
            if arr.size != int(np.prod(shape)):
                raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
            arr = arr.reshape(shape)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"non-positive dimension in shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor values must be finite")
        self.array = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self.array.reshape(-1)

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_array(values, ndim: int, what: str) -> np.ndarray:
    """Coerce a Tensor or array-like to a float64 ndarray of given rank."""
    arr = values.array if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{what}: expected {ndim}-d data, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# primitive ops


def conv2d(inp, kernels, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    """2-D convolution (cross-correlation) of a CxHxW input with KxCxkhxkw
    kernels.

    Output size per axis is `(H + 2*pad - kh) // stride + 1`. Each output
    value accumulates over (input channel, kernel row, kernel column) in that
    order with the bias added last, matching the naive loop evaluation
    bit-for-bit.
    """
    x = as_array(inp, 3, "conv2d input")
    w = as_array(kernels, 4, "conv2d kernels")
    b = as_array(bias, 1, "conv2d bias")
    c_in, h, wdt = x.shape
    k, c_k, kh, kw = w.shape
    if c_k != c_in:
        raise ShapeError(f"kernel expects {c_k} input channels, input has {c_in}")
    if b.shape[0] != k:
        raise ShapeError(f"bias length {b.shape[0]} does not match {k} kernels")
    if stride < 1:
        raise InvalidArgument(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise InvalidArgument(f"pad must be >= 0, got {pad}")
    hp, wp = h + 2 * pad, wdt + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    xp = x
    if pad:
        xp = np.zeros((c_in, hp, wp), dtype=np.float64)
        xp[:, pad : pad + h, pad : pad + wdt] = x
    out = np.zeros((k, out_h, out_w), dtype=np.float64)
    for c in range(c_in):
        plane = xp[c]
        for dy in range(kh):
            for dx in range(kw):
                win = plane[dy : dy + stride * out_h : stride, dx : dx + stride * out_w : stride]
                out += w[:, c, dy, dx][:, None, None] * win[None, :, :]
    out += b[:, None, None]
    return out


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, dz: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. kernels, bias, and input."""
    c_in, h, wdt = x.shape
    k, _, kh, kw = w.shape
    _, out_h, out_w = dz.shape
    hp, wp = h + 2 * pad, wdt + 2 * pad
    xp = x
    if pad:
        xp = np.zeros((c_in, hp, wp), dtype=np.float64)
        xp[:, pad : pad + h, pad : pad + wdt] = x
    dw = np.zeros_like(w)
    dxp = np.zeros((c_in, hp, wp), dtype=np.float64)
    db = dz.sum(axis=(1, 2))
    for dy in range(kh):
        for dx in range(kw):
            rows = slice(dy, dy + stride * out_h, stride)
            cols = slice(dx, dx + stride * out_w, stride)
            win = xp[:, rows, cols]
            for c in range(c_in):
                dw[:, c, dy, dx] = (dz * win[c][None, :, :]).sum(axis=(1, 2))
            spread = np.zeros((c_in, out_h, out_w), dtype=np.float64)
            for kk in range(k):
                spread += w[kk, :, dy, dx][:, None, None] * dz[kk][None, :, :]
            dxp[:, rows, cols] += spread
    dx = dxp[:, pad : pad + h, pad : pad + wdt] if pad else dxp
    return dw, db, dx


def maxpool2(inp) -> tuple[np.ndarray, np.ndarray]:
    """2x2 stride-2 max pooling of a CxHxW input.

    Returns the pooled map and, per output cell, the absolute (row, col)
    input coordinates of the maximum. Ties go to the first occurrence in
    row-major window order; trailing odd rows/columns are dropped.
    """
    x = as_array(inp, 3, "maxpool2 input")
    c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2 needs H,W >= 2, got {h}x{w}")
    oh, ow = h // 2, w // 2
    vals = np.empty((4, c, oh, ow), dtype=np.float64)
    vals[0] = x[:, 0 : 2 * oh : 2, 0 : 2 * ow : 2]
    vals[1] = x[:, 0 : 2 * oh : 2, 1 : 2 * ow : 2]
    vals[2] = x[:, 1 : 2 * oh : 2, 0 : 2 * ow : 2]
    vals[3] = x[:, 1 : 2 * oh : 2, 1 : 2 * ow : 2]
    best = vals[0].copy()
    code = np.zeros((c, oh, ow), dtype=np.int64)
    for cand in (1, 2, 3):
        better = vals[cand] > best
        best = np.where(better, vals[cand], best)
        code = np.where(better, cand, code)
    base_y = 2 * np.arange(oh, dtype=np.int64)[None, :, None]
    base_x = 2 * np.arange(ow, dtype=np.int64)[None, None, :]
    idx = np.stack((base_y + code // 2, base_x + code % 2), axis=-1)
    return best, idx


def maxpool2_backward(dout: np.ndarray, idx: np.ndarray, in_shape: tuple[int, int, int]) -> np.ndarray:
    """Route pooled gradients back to the argmax positions."""
    c, h, w = in_shape
    dx = np.zeros((c, h, w), dtype=np.float64)
    chan = np.arange(c, dtype=np.int64)[:, None, None]
    flat = chan * (h * w) + idx[..., 0] * w + idx[..., 1]
    # 2x2 stride-2 windows are disjoint, so flat indices are unique
    dx.reshape(-1)[flat.reshape(-1)] = dout.reshape(-1)
    return dx


def dense(inp, weights, bias) -> np.ndarray:
    """Affine map `out_i = sum_j w_ij * x_j + b_i`, accumulated over j in order."""
    x = as_array(inp, 1, "dense input")
    w = as_array(weights, 2, "dense weights")
    b = as_array(bias, 1, "dense bias")
    m, n = w.shape
    if x.shape[0] != n:
        raise ShapeError(f"dense expects input of length {n}, got {x.shape[0]}")
    if b.shape[0] != m:
        raise ShapeError(f"dense bias length {b.shape[0]} does not match {m} outputs")
    out = np.zeros(m, dtype=np.float64)
    for j in range(n):
        out += w[:, j] * x[j]
    out += b
    return out


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax; the result sums to 1 within 1e-12."""
    z = as_array(logits, 1, "softmax logits")
    if z.shape[0] < 1:
        raise ShapeError("softmax needs at least one logit")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax received non-finite logits")
    e = np.exp(z - z.max())
    return e / e.sum()


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def xavier_uniform(rng: Rng, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init in [-a, a], a = sqrt(6 / (fan_in + fan_out)); draws are
    consumed in row-major order."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    flat = rng.f64_array(int(np.prod(shape)))
    return (flat * 2.0 * a - a).reshape(shape)


def he_uniform(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform init in [-a, a], a = sqrt(6 / fan_in); the relu-friendly
    choice used for the shipped conv stacks. Row-major draw order."""
    a = np.sqrt(6.0 / fan_in)
    flat = rng.f64_array(int(np.prod(shape)))
    return (flat * 2.0 * a - a).reshape(shape)


# ---------------------------------------------------------------------------
# layers


class ConvLayer:
    """Convolution with optional relu/sigmoid activation."""

    def __init__(self, name: str, weights: np.ndarray, bias: np.ndarray,
                 stride: int = 1, pad: int = 0, activation: str | None = None):
        if activation not in (None, "relu", "sigmoid"):
            raise InvalidArgument(f"unknown activation {activation!r}")
        self.name = name
        self.w = np.asarray(weights, dtype=np.float64)
        self.b = np.asarray(bias, dtype=np.float64)
        self.stride = stride
        self.pad = pad
        self.activation = activation

    def forward(self, x: np.ndarray, entry: dict) -> np.ndarray:
        z = conv2d(x, self.w, self.b, self.stride, self.pad)
        entry["x"] = x
        entry["z"] = z
        if self.activation == "relu":
            return relu(z)
        if self.activation == "sigmoid":
            a = sigmoid(z)
            entry["a"] = a
            return a
        return z

    def backward(self, dout: np.ndarray, entry: dict) -> tuple[np.ndarray, dict]:
        if self.activation == "relu":
            dz = dout * (entry["z"] > 0.0)
        elif self.activation == "sigmoid":
            a = entry["a"]
            dz = dout * a * (1.0 - a)
        else:
            dz = dout
        dw, db, dx = conv2d_backward(entry["x"], self.w, dz, self.stride, self.pad)
        return dx, {"w": dw, "b": db}

    def params(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}


class MaxPool2Layer:
    def __init__(self, name: str):
        self.name = name

    def forward(self, x: np.ndarray, entry: dict) -> np.ndarray:
        out, idx = maxpool2(x)
        entry["idx"] = idx
        entry["in_shape"] = x.shape
        return out

    def backward(self, dout: np.ndarray, entry: dict) -> tuple[np.ndarray, dict]:
        return maxpool2_backward(dout, entry["idx"], entry["in_shape"]), {}

    def params(self) -> dict[str, np.ndarray]:
        return {}


class GlobalAvgPoolLayer:
    def __init__(self, name: str):
        self.name = name

    def forward(self, x: np.ndarray, entry: dict) -> np.ndarray:
        # The input feature map is kept because class activation mapping
        # reads it back alongside its gradient.
        entry["x"] = x
        entry["in_shape"] = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout: np.ndarray, entry: dict) -> tuple[np.ndarray, dict]:
        c, h, w = entry["in_shape"]
        dx = np.broadcast_to((dout / (h * w))[:, None, None], (c, h, w)).copy()
        return dx, {}

    def params(self) -> dict[str, np.ndarray]:
        return {}


class DenseLayer:
    def __init__(self, name: str, weights: np.ndarray, bias: np.ndarray):
        self.name = name
        self.w = np.asarray(weights, dtype=np.float64)
        self.b = np.asarray(bias, dtype=np.float64)

    def forward(self, x: np.ndarray, entry: dict) -> np.ndarray:
        entry["x"] = x
        return dense(x, self.w, self.b)

    def backward(self, dout: np.ndarray, entry: dict) -> tuple[np.ndarray, dict]:
        x = entry["x"]
        dw = dout[:, None] * x[None, :]
        db = dout.copy()
        dx = np.zeros_like(x)
        for i in range(self.w.shape[0]):
            dx += self.w[i] * dout[i]
        return dx, {"w": dw, "b": db}

    def params(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}


# ---------------------------------------------------------------------------
# network


class LayerCache:
    """Per-layer intermediates from one forward pass, consumed by backward."""

    def __init__(self, network: "Network", entries: list[dict], output_shape: tuple[int, ...]):
        self.network = network
        self.entries = entries
        self.output_shape = output_shape


class Network:
    """Fixed sequence of layers with a declared input shape."""

    def __init__(self, name: str, input_shape: tuple[int, int, int], layers: list):
        self.name = name
        self.input_shape = tuple(input_shape)
        self.layers = layers

    def param_tensors(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs in serialization order: per layer, weight then bias."""
        out = []
        for layer in self.layers:
            for pname, arr in layer.params().items():
                out.append((f"{layer.name}.{pname}", arr))
        return out

    def set_param(self, name: str, values: np.ndarray) -> None:
        layer_name, pname = name.rsplit(".", 1)
        for layer in self.layers:
            if layer.name == layer_name:
                current = getattr(layer, pname)
                if current.shape != values.shape:
                    raise ShapeError(f"{name}: expected shape {current.shape}, got {values.shape}")
                setattr(layer, pname, np.asarray(values, dtype=np.float64))
                return
        raise ShapeError(f"no layer named {layer_name!r} in {self.name}")

    def copy_weights(self) -> list[np.ndarray]:
        return [arr.copy() for _, arr in self.param_tensors()]

    def load_weights(self, arrays: list[np.ndarray]) -> None:
        tensors = self.param_tensors()
        if len(arrays) != len(tensors):
            raise ShapeError(f"expected {len(tensors)} weight tensors, got {len(arrays)}")
        for (name, _), arr in zip(tensors, arrays):
            self.set_param(name, arr)


def network_forward(network: Network, inp) -> tuple[np.ndarray, LayerCache]:
    """Run the network, retaining every intermediate needed for an exact
    backward pass."""
    x = as_array(inp, 3, f"{network.name} input")
    if x.shape != network.input_shape:
        raise ShapeError(f"{network.name} expects input {network.input_shape}, got {x.shape}")
    entries: list[dict] = []
    for layer in network.layers:
        entry: dict = {}
        x = layer.forward(x, entry)
        entries.append(entry)
    return x, LayerCache(network, entries, x.shape)


class BackwardResult:
    """Exact gradients from one backward sweep.

    `param_grads` maps "layer.tensor" to its gradient; `layer_input_grads[i]`
    is the gradient w.r.t. the input of layer i (index 0 is the network
    input).
    """

    def __init__(self, param_grads: dict[str, np.ndarray], layer_input_grads: list[np.ndarray]):
        self.param_grads = param_grads
        self.layer_input_grads = layer_input_grads

    @property
    def input_grad(self) -> np.ndarray:
        return self.layer_input_grads[0]


def network_backward(network: Network, cache: LayerCache, dout) -> BackwardResult:
    """Backpropagate an output gradient through a cached forward pass."""
    if cache.network is not network:
        raise StateError("cache was produced by a different network")
    if len(cache.entries) != len(network.layers):
        raise StateError("cache does not cover every layer of the network")
    grad = np.asarray(dout, dtype=np.float64)
    if grad.shape != cache.output_shape:
        raise ShapeError(f"dout shape {grad.shape} does not match output {cache.output_shape}")
    param_grads: dict[str, np.ndarray] = {}
    input_grads: list[np.ndarray] = [None] * len(network.layers)
    for i in range(len(network.layers) - 1, -1, -1):
        layer = network.layers[i]
        grad, pgrads = layer.backward(grad, cache.entries[i])
        input_grads[i] = grad
        for pname, g in pgrads.items():
            param_grads[f"{layer.name}.{pname}"] = g
    return BackwardResult(param_grads, input_grads)


def grad_check(network: Network, inp, eps: float = 1e-5, max_per_tensor: int = 24) -> float:
    """Worst relative error between analytic gradients and central finite
    differences over a sampled parameter subset.

    The scalar under test is a fixed random projection of the network output.
    Relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    if not 0.0 < eps <= 1e-2:
        raise InvalidArgument(f"eps must be in (0, 1e-2], got {eps}")
    x = as_array(inp, 3, "grad_check input")
    out, cache = network_forward(network, x)
    proj_rng = Rng(0xC0FFEE)
    proj = (proj_rng.f64_array(out.size) * 2.0 - 1.0).reshape(out.shape)
    analytic = network_backward(network, cache, proj).param_grads

    def objective() -> float:
        o, _ = network_forward(network, x)
        return float((o * proj).sum())

    worst = 0.0
    for name, arr in network.param_tensors():
        flat = arr.reshape(-1)
        n = flat.size
        count = min(max_per_tensor, n)
        positions = np.unique(np.linspace(0, n - 1, count).astype(np.int64))
        ana_flat = analytic[name].reshape(-1)
        for p in positions:
            orig = flat[p]
            flat[p] = orig + eps
            f_plus = objective()
            flat[p] = orig - eps
            f_minus = objective()
            flat[p] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(ana_flat[p])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
