"""A small neural-network engine: dense and 1-D conv layers, activations,
binary cross-entropy, reverse-mode gradients and Adam.

Tensors are plain numpy arrays. Dense layers take ``(batch, features)``;
conv layers use channels-last ``(batch, length, channels)`` and also accept
``(batch, length)`` as a single channel. Parameters are stored in the model's
dtype (float32 for training, float64 for gradient checks); loss values and
bias reductions are accumulated in float64.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from ._io import atomic_write_bytes, crc32c

BCE_EPS = 1e-7
WEIGHTS_MAGIC = b"wallprofile-weights 1\n"


class DimensionError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


# --- functional forms --------------------------------------------------------------

def dense_forward(x, W, b):
    """``y = x W^T + b`` for a batch ``x`` of shape ``(batch, in)``; ``W`` is ``(out, in)``."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weight {W.shape}")
    return x @ W.T + b


def _as_channels_last(x, in_channels):
    if x.ndim == 2 and in_channels == 1:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[2] != in_channels:
        raise DimensionError(f"conv1d: input {x.shape} incompatible with {in_channels} input channels")
    return x


def _shifted_gemm_forward(x, K, b):
    """Same-padded correlation as ``k`` GEMMs over the flattened padded batch.

    The padded batch ``(B, L + k - 1, C)`` is viewed as one long sequence;
    output row ``r`` sums ``xp[r + j] @ K[:, :, j].T``. Rows whose window
    straddles two samples fall in the padding and are dropped.
    """
    O, C, k = K.shape
    B, L, _ = x.shape
    p = (k - 1) // 2
    Lp = L + k - 1
    xp = np.zeros((B, Lp, C), dtype=np.result_type(x, K))
    xp[:, p:p + L] = x
    flat = xp.reshape(B * Lp, C)
    n = B * Lp - (k - 1)
    y = np.empty((B * Lp, O), dtype=flat.dtype)
    y[n:] = 0
    taps = [np.ascontiguousarray(K[:, :, j].T) for j in range(k)]  # BLAS needs unit strides
    if C == 1:  # rank-1 products: broadcasting beats a degenerate GEMM
        np.multiply(flat[0:n], taps[0], out=y[:n])
        for j in range(1, k):
            y[:n] += flat[j:j + n] * taps[j]
    else:
        np.matmul(flat[0:n], taps[0], out=y[:n])
        for j in range(1, k):
            y[:n] += flat[j:j + n] @ taps[j]
    y = y.reshape(B, Lp, O)[:, :L]
    y += b
    return y, flat


def conv1d_forward(x, K, b):
    """Stride-1, zero 'same' padding cross-correlation.

    ``K`` has shape ``(out_channels, in_channels, kernel)``; output is
    ``(batch, length, out_channels)`` with
    ``y[n, t, o] = b[o] + sum_{c, j} K[o, c, j] * x[n, t + j - p, c]``,
    ``p = (kernel - 1) // 2``.
    """
    O, C, k = K.shape
    x = _as_channels_last(np.asarray(x), C)
    return np.ascontiguousarray(_shifted_gemm_forward(x, K, b)[0])


# --- layers ------------------------------------------------------------------------

@dataclass
class LayerSpec:
    kind: str
    n_in: int = 0
    n_out: int = 0
    kernel: int = 0

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v or k == "kind"}


class Layer:
    param_names: tuple = ()

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad, need_input_grad=True):
        raise NotImplementedError


class Dense(Layer):
    param_names = ("W", "b")

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("dense", n_in, n_out)
        limit = np.sqrt(6.0 / (n_in + n_out))
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = rng.uniform(-limit, limit, size=(n_out, n_in)).astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x):
        self._cache = x
        return dense_forward(x, self.params["W"], self.params["b"])

    def backward(self, grad, need_input_grad=True):
        x = self._cache
        W = self.params["W"]
        gW = self.grads.get("W")
        if gW is None or gW.dtype != np.result_type(grad, x):
            gW = self.grads["W"] = np.empty(W.shape, dtype=np.result_type(grad, x))
        # reuse the buffer: the large layers would otherwise page in a fresh array every step
        np.matmul(grad.T, x, out=gW)
        self.grads["b"] = grad.sum(axis=0, dtype=np.float64).astype(W.dtype)
        return grad @ W if need_input_grad else None


class Conv1D(Layer):
    param_names = ("K", "b")

    def __init__(self, n_in, n_out, kernel=3, rng=None, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("conv1d", n_in, n_out, kernel)
        fan_in, fan_out = n_in * kernel, n_out * kernel
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["K"] = rng.uniform(-limit, limit, size=(n_out, n_in, kernel)).astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x):
        K = self.params["K"]
        x = _as_channels_last(np.asarray(x), K.shape[1])
        y, flat = _shifted_gemm_forward(x, K, self.params["b"])
        self._cache = (flat, x.shape)
        return np.ascontiguousarray(y)

    def backward(self, grad, need_input_grad=True):
        flat, (B, L, C) = self._cache
        K = self.params["K"]
        O, _, k = K.shape
        p = (k - 1) // 2
        Lp = L + k - 1
        n = B * Lp - (k - 1)
        gp = np.zeros((B, Lp, O), dtype=grad.dtype)
        gp[:, :L] = grad
        G = gp.reshape(B * Lp, O)[:n]
        gK = np.empty(K.shape, dtype=np.result_type(flat, G))
        for j in range(k):
            gK[:, :, j] = G.T @ flat[j:j + n]
        self.grads["K"] = gK
        self.grads["b"] = grad.reshape(-1, O).sum(axis=0, dtype=np.float64).astype(K.dtype)
        if not need_input_grad:
            return None
        dxp = np.zeros((B * Lp, C), dtype=gK.dtype)
        for j in range(k):
            dxp[j:j + n] += G @ np.ascontiguousarray(K[:, :, j])
        dx = dxp.reshape(B, Lp, C)[:, p:p + L]
        return dx[:, :, 0] if C == 1 and self._in_was_2d else dx

    @property
    def _in_was_2d(self):
        return getattr(self, "_flat_input", False)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("relu")

    def forward(self, x):
        self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, grad, need_input_grad=True):
        return grad * self._cache


class Sigmoid(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("sigmoid")

    def forward(self, x):
        # split by sign to avoid overflow in exp
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._cache = out
        return out

    def backward(self, grad, need_input_grad=True):
        s = self._cache
        return grad * s * (1.0 - s)


class Tanh(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("tanh")

    def forward(self, x):
        out = np.tanh(x)
        self._cache = out
        return out

    def backward(self, grad, need_input_grad=True):
        t = self._cache
        return grad * (1.0 - t * t)


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("flatten")

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad, need_input_grad=True):
        return grad.reshape(self._cache)


_ACTIVATIONS = {"relu": ReLU, "sigmoid": Sigmoid, "tanh": Tanh, "flatten": Flatten}


def make_layer(spec: LayerSpec, rng=None, dtype=np.float32) -> Layer:
    if spec.kind == "dense":
        return Dense(spec.n_in, spec.n_out, rng, dtype)
    if spec.kind == "conv1d":
        return Conv1D(spec.n_in, spec.n_out, spec.kernel, rng, dtype)
    if spec.kind in _ACTIVATIONS:
        return _ACTIVATIONS[spec.kind]()
    raise ValueError(f"unknown layer kind {spec.kind!r}")


class Sequential:
    """A chain of layers with named parameters ``"<index>.<name>"``."""

    def __init__(self, specs, seed: int = 0, dtype=np.float32, input_shape=None):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec(**s) for s in specs]
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers = [make_layer(s, rng, self.dtype) for s in self.specs]
        self._recorded = False
        self._check_shapes(input_shape)

    def _check_shapes(self, input_shape):
        if input_shape is None:
            return
        x = np.zeros((1,) + tuple(input_shape), dtype=self.dtype)
        try:
            for layer in self.layers:
                x = layer.forward(x)
        except DimensionError as exc:
            raise DimensionError(f"layer stack is not shape-compatible: {exc}") from exc
        self.output_shape = x.shape[1:]

    @property
    def params(self) -> dict:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    @property
    def grads(self) -> dict:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def set_params(self, params: dict) -> None:
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                value = np.asarray(params[f"{i}.{k}"], dtype=self.dtype)
                if value.shape != layer.params[k].shape:
                    raise DimensionError(f"{i}.{k}: shape {value.shape} != {layer.params[k].shape}")
                layer.params[k] = value.copy()

    def forward(self, x, record: bool = True):
        x = np.asarray(x, dtype=self.dtype)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv1D):
                layer._flat_input = x.ndim == 2
            x = layer.forward(x)
            if not np.isfinite(x).all():
                raise NonFiniteError(f"non-finite output from layer {i} ({layer.spec.kind})")
        self._recorded = record
        return x

    __call__ = forward

    def backward(self, grad_out, need_input_grad: bool = False):
        """Reverse pass from ``dL/d(output)``; fills ``grads`` and returns ``dL/d(input)``."""
        if not self._recorded:
            raise StateError("backward called without a recorded forward pass")
        g = np.asarray(grad_out, dtype=self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            g = self.layers[i].backward(g, need_input_grad=need_input_grad or i > 0)
        self._recorded = False
        return g

    def predict(self, x, batch_size: int = 64):
        x = np.asarray(x, dtype=self.dtype)
        outs = [self.forward(x[i:i + batch_size], record=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.empty((0,))


def backward(model: Sequential, x, grad_out):
    """Parameter gradients and input gradient of ``model`` at ``x`` for upstream ``grad_out``.

    ``x`` must be the input of the most recent recorded forward pass.
    """
    if not model._recorded:
        raise StateError("backward called without a recorded forward pass")
    gx = model.backward(grad_out, need_input_grad=True)
    return dict(model.grads), gx


# --- loss --------------------------------------------------------------------------

def bce_loss(pred, target, eps: float = BCE_EPS):
    """Mean binary cross-entropy and its gradient with respect to ``pred``.

    Predictions are clamped to ``[eps, 1 - eps]``; the gradient is that of the
    clamped expression, evaluated in float64.
    """
    p = np.clip(np.asarray(pred, dtype=np.float64), eps, 1.0 - eps)
    t = np.asarray(target, dtype=np.float64)
    n = p.size
    loss = -np.sum(t * np.log(p) + (1.0 - t) * np.log1p(-p)) / n
    grad = (p - t) / (p * (1.0 - p)) / n
    return float(loss), grad.astype(np.asarray(pred).dtype, copy=False)


# --- Adam ----------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@njit(cache=True)
def _adam_kernel(p, g, m, v, b1, c1, b2, c2, step_size, eps_scaled):
    # all scalars arrive in the parameter dtype so float32 stays float32
    p1 = p.reshape(-1)
    g1 = g.reshape(-1)
    m1 = m.reshape(-1)
    v1 = v.reshape(-1)
    for i in range(p1.size):
        gi = g1[i]
        mi = b1 * m1[i] + c1 * gi
        vi = b2 * v1[i] + c2 * gi * gi
        m1[i] = mi
        v1[i] = vi
        p1[i] -= step_size * mi / (np.sqrt(vi) + eps_scaled)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Uses the folded form ``lr * sqrt(1-b2^t)/(1-b1^t) * m / (sqrt(v) + eps*sqrt(1-b2^t))``,
    algebraically identical to ``lr * m_hat / (sqrt(v_hat) + eps)``.
    """
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    step_size = state.lr * np.sqrt(c2) / c1
    eps_scaled = state.eps * np.sqrt(c2)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adam: gradient {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        g = np.ascontiguousarray(g, dtype=p.dtype)
        f = p.dtype.type
        _adam_kernel(p, g, state.m[name], state.v[name], f(state.beta1), f(1.0 - state.beta1),
                     f(state.beta2), f(1.0 - state.beta2), f(step_size), f(eps_scaled))


# --- weight files ------------------------------------------------------------------

def save_weights(path, model: Sequential, extra: dict | None = None) -> None:
    """Text header line + JSON header line + float32 LE payload + CRC-32C of all preceding bytes."""
    entries = []
    chunks = []
    offset = 0
    for name, value in model.params.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {"format_version": 1, "dtype": "float32-le", "init": "glorot-uniform",
              "init_seed": model.seed, "layers": [s.to_dict() for s in model.specs],
              "params": entries, "payload_bytes": offset, "extra": extra or {}}
    body = WEIGHTS_MAGIC + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + b"".join(chunks)
    atomic_write_bytes(path, body + crc32c(body).to_bytes(4, "little"))


class WeightFileError(ValueError):
    pass


def load_weights(path, dtype=np.float32):
    """Return ``(model, header)``."""
    data = open(path, "rb").read()
    if not data.startswith(WEIGHTS_MAGIC):
        raise WeightFileError(f"{path}: not a wallprofile weight file")
    body, stored = data[:-4], int.from_bytes(data[-4:], "little")
    if crc32c(body) != stored:
        raise WeightFileError(f"{path}: CRC-32C mismatch")
    rest = body[len(WEIGHTS_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl].decode("utf-8"))
    if header.get("format_version") != 1:
        raise WeightFileError(f"{path}: unsupported weight format {header.get('format_version')!r}")
    payload = rest[nl + 1:]
    if len(payload) != header["payload_bytes"]:
        raise WeightFileError(f"{path}: payload truncated at byte {len(payload)}")
    model = Sequential([LayerSpec(**s) for s in header["layers"]], seed=header["init_seed"], dtype=dtype)
    params = {}
    for e in header["params"]:
        count = int(np.prod(e["shape"]))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=e["offset"])
        params[e["name"]] = arr.reshape(e["shape"])
    model.set_params(params)
    return model, header
