"""Small feed-forward classifier with frozen base weights and trainable
low-rank adapter pairs per layer.

Forward/backward are fully analytic (softmax cross-entropy head), including
the gradient with respect to the input vector, which the layer-sensitivity
noise generation needs. Per-layer hidden activations are captured on every
forward pass.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .linalg import make_rng

ACTIVATIONS = ("relu", "identity")

A_INIT_STD = 0.02


@dataclass
class LoraLayer:
    w_base: np.ndarray  # (d_out, d_in), frozen
    a: np.ndarray       # (rank, d_in), trainable
    b: np.ndarray       # (d_out, rank), trainable
    bias: np.ndarray    # (d_out,), frozen
    activation: str

    def __post_init__(self):
        d_out, d_in = self.w_base.shape
        r = self.a.shape[0]
        assert self.a.shape == (r, d_in)
        assert self.b.shape == (d_out, r)
        assert self.bias.shape == (d_out,)
        assert r <= min(d_in, d_out), "adapter rank exceeds layer dimensions"
        assert self.activation in ACTIVATIONS

    @property
    def d_in(self):
        return self.w_base.shape[1]

    @property
    def d_out(self):
        return self.w_base.shape[0]

    @property
    def rank(self):
        return self.a.shape[0]


@dataclass
class LoraNetwork:
    layers: list
    num_classes: int

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            assert prev.d_out == nxt.d_in, "incompatible consecutive layer dims"
        assert self.layers[-1].d_out == self.num_classes
        assert self.layers[-1].activation == "identity"

    @property
    def input_dim(self):
        return self.layers[0].d_in

    def lora_param_count(self):
        return sum(l.a.size + l.b.size for l in self.layers)


@dataclass
class ForwardTrace:
    hidden: list          # post-activation output per layer
    logits: np.ndarray
    loss: float | None = None
    probs: np.ndarray | None = None


@dataclass
class Gradients:
    """Per-layer adapter gradients for one (sample, label) pair.

    `delta` is the pre-activation loss gradient and `x_in` the layer input;
    together with `a_row_contrib` (row mu = b[mu] * delta[mu], captured at
    backward time) they allow neuron-masked reconstruction of dA without
    re-running backprop.
    """
    da: list
    db: list
    delta: list
    x_in: list
    a_row_contrib: list
    d_input: np.ndarray = field(default=None)
    loss: float = field(default=None)


def build_network(input_dim, hidden_dims, num_classes, rank=2, seed=0):
    """Fresh network: random frozen base, A ~ N(0, 0.02), B = 0."""
    rng = make_rng(seed, 0xA)
    dims = [input_dim] + list(hidden_dims) + [num_classes]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
        w.setflags(write=False)
        a = rng.normal(0.0, A_INIT_STD, size=(rank, d_in))
        b = np.zeros((d_out, rank))
        bias = np.zeros(d_out)
        bias.setflags(write=False)
        layers.append(LoraLayer(w, a, b, bias, "identity" if last else "relu"))
    return LoraNetwork(layers, num_classes)


def clone_network(net):
    layers = [
        LoraLayer(l.w_base, l.a.copy(), l.b.copy(), l.bias, l.activation)
        for l in net.layers
    ]
    return LoraNetwork(layers, net.num_classes)


def _softmax(z):
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def forward(net, x, label=None):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValueError(f"input shape {x.shape} != ({net.input_dim},)")
    hidden = []
    h = x
    for layer in net.layers:
        z = layer.w_base @ h + layer.b @ (layer.a @ h) + layer.bias
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        hidden.append(h)
    logits = hidden[-1]
    trace = ForwardTrace(hidden=hidden, logits=logits)
    if label is not None:
        m = np.max(logits)
        lse = m + np.log(np.sum(np.exp(logits - m)))
        trace.loss = float(lse - logits[label])
        trace.probs = _softmax(logits)
    return trace


def backward(net, x, label):
    """Analytic gradients of the cross-entropy loss w.r.t. every A, B and the
    input x. Frozen parameters get no gradient slots."""
    x = np.asarray(x, dtype=np.float64)
    trace = forward(net, x, label)
    inputs = [x] + trace.hidden[:-1]

    delta = trace.probs.copy()
    delta[label] -= 1.0

    g = Gradients(da=[None] * len(net.layers), db=[None] * len(net.layers),
                  delta=[None] * len(net.layers), x_in=[None] * len(net.layers),
                  a_row_contrib=[None] * len(net.layers), loss=trace.loss)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        x_in = inputs[li]
        if layer.activation == "relu":
            delta = delta * (trace.hidden[li] > 0)
        ax = layer.a @ x_in
        g.db[li] = np.outer(delta, ax)
        g.da[li] = np.outer(layer.b.T @ delta, x_in)
        g.delta[li] = delta
        g.x_in[li] = x_in
        g.a_row_contrib[li] = layer.b * delta[:, None]
        delta = (layer.w_base + layer.b @ layer.a).T @ delta
    g.d_input = delta
    return g


def apply_update(net, g, lr, mask=None):
    """SGD step on the adapter pairs.

    `mask` (optional) holds one boolean vector over output neurons per layer,
    or None for fully-trainable layers. A masked-out neuron freezes its row
    of B and removes its gradient path into dA; with an all-false mask the
    layer is bitwise untouched.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for li, layer in enumerate(net.layers):
        m = None if mask is None else mask[li]
        if m is None:
            layer.a -= lr * g.da[li]
            layer.b -= lr * g.db[li]
            continue
        m = np.asarray(m, dtype=bool)
        if m.shape != (layer.d_out,):
            raise ValueError(f"mask shape {m.shape} != ({layer.d_out},)")
        if not m.any():
            continue
        coeff = g.a_row_contrib[li][m].sum(axis=0)
        layer.a -= lr * np.outer(coeff, g.x_in[li])
        layer.b[m] -= lr * g.db[li][m]


def full_rank_delta(a_t, b_t, a_prev, b_prev):
    """Reconstructed full-rank update of the effective weight delta B.A."""
    return b_t @ a_t - b_prev @ a_prev


# --- flat adapter vector view (Hessian / Lipschitz machinery) ---

def lora_slices(net):
    """Per-layer (a_slice, b_slice) into the flattened adapter vector."""
    slices = []
    off = 0
    for layer in net.layers:
        sa = slice(off, off + layer.a.size)
        off += layer.a.size
        sb = slice(off, off + layer.b.size)
        off += layer.b.size
        slices.append((sa, sb))
    return slices


def flatten_lora(net):
    return np.concatenate([np.concatenate([l.a.ravel(), l.b.ravel()])
                           for l in net.layers])


def set_lora_flat(net, vec):
    vec = np.asarray(vec, dtype=np.float64)
    for layer, (sa, sb) in zip(net.layers, lora_slices(net)):
        layer.a = vec[sa].reshape(layer.a.shape).copy()
        layer.b = vec[sb].reshape(layer.b.shape).copy()


def dataset_loss(net, xs, ys):
    return sum(forward(net, x, y).loss for x, y in zip(xs, ys)) / len(xs)


def dataset_loss_grad_flat(net, xs, ys):
    """Mean cross-entropy gradient over (xs, ys), flattened adapter layout."""
    acc = np.zeros(sum(l.a.size + l.b.size for l in net.layers))
    slices = lora_slices(net)
    for x, y in zip(xs, ys):
        g = backward(net, x, y)
        for li, (sa, sb) in enumerate(slices):
            acc[sa] += g.da[li].ravel()
            acc[sb] += g.db[li].ravel()
    return acc / len(xs)


# --- checkpoint fixture format: magic, version, dims, row-major float64 ---

_MAGIC = b"FLNC"
_VERSION = 1
_ACT_CODE = {"relu": 0, "identity": 1}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}


def save_network(net, path):
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<HHI", _VERSION, len(net.layers), net.num_classes))
        for l in net.layers:
            f.write(struct.pack("<IIIB", l.d_out, l.d_in, l.rank,
                                _ACT_CODE[l.activation]))
            for arr in (l.w_base, l.a, l.b, l.bias):
                f.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def load_network(path):
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError("bad checkpoint magic")
        version, n_layers, num_classes = struct.unpack("<HHI", f.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        layers = []
        for _ in range(n_layers):
            d_out, d_in, r, act = struct.unpack("<IIIB", f.read(13))

            def block(shape):
                n = int(np.prod(shape))
                return np.frombuffer(f.read(8 * n), dtype=np.float64).reshape(shape).copy()

            w = block((d_out, d_in))
            a = block((r, d_in))
            b = block((d_out, r))
            bias = block((d_out,))
            layers.append(LoraLayer(w, a, b, bias, _ACT_NAME[act]))
    return LoraNetwork(layers, num_classes)
