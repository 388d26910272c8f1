"""Diagonal Fisher information per sample, difficulty scores, momentum
smoothing, and neuron-wise importance aggregation.

The diagonal is taken over the reconstructed full-rank direction of each
layer: the gradient of the loss w.r.t. the effective weight delta B.A, laid
out row-major like the layer's base weight matrix. Entry j is the square of
gradient component j.
"""

from dataclasses import dataclass

import numpy as np

from .network import backward


@dataclass
class FimDiag:
    """Per-layer diagonal FIM entries in row-major full-weight layout."""
    per_layer: list          # one flat vector of length d_out*d_in per layer
    layer_shapes: list       # (d_out, d_in) per layer

    def total(self):
        return float(sum(v.sum() for v in self.per_layer))


@dataclass
class BatchScore:
    batch_id: int
    score: float


def sample_fim_diag(net, s, label):
    """Squared per-entry gradient of log-likelihood in full-weight layout."""
    g = backward(net, s, label)
    per_layer = []
    shapes = []
    for delta, x_in in zip(g.delta, g.x_in):
        grad_w = np.outer(delta, x_in)  # dL/d(B.A) for this layer
        if not np.all(np.isfinite(grad_w)):
            raise ArithmeticError("non-finite gradient while scoring sample")
        per_layer.append((grad_w ** 2).ravel())
        shapes.append(grad_w.shape)
    return FimDiag(per_layer=per_layer, layer_shapes=shapes)


def sample_score(fd):
    """Difficulty of one sample: trace of its diagonal FIM."""
    return fd.total()


def batch_score(scores):
    if len(scores) == 0:
        raise ValueError("empty batch has no score")
    return float(sum(scores))


def momentum_update(prev, fresh, gamma_m):
    """Exponential moving average of FIM diagonals; first epoch passes
    `fresh` through unchanged."""
    if not 0.0 <= gamma_m <= 1.0:
        raise ValueError("momentum coefficient must lie in [0, 1]")
    if prev is None:
        return FimDiag([v.copy() for v in fresh.per_layer],
                       list(fresh.layer_shapes))
    if fresh.layer_shapes != prev.layer_shapes:
        raise ValueError("FIM shape mismatch in momentum update")
    mixed = [gamma_m * p + (1.0 - gamma_m) * f
             for p, f in zip(prev.per_layer, fresh.per_layer)]
    return FimDiag(mixed, list(prev.layer_shapes))


def average_fim(fims):
    """Elementwise mean of per-sample FIM diagonals (empirical device FIM)."""
    if len(fims) == 0:
        raise ValueError("no FIMs to average")
    out = [np.zeros_like(v) for v in fims[0].per_layer]
    for fd in fims:
        for acc, v in zip(out, fd.per_layer):
            acc += v
    return FimDiag([v / len(fims) for v in out], list(fims[0].layer_shapes))


def neuron_scores(fd, layer):
    """Importance of each output neuron: sum of its row's diagonal entries."""
    if not 0 <= layer < len(fd.per_layer):
        raise IndexError(f"layer {layer} out of range")
    d_out, d_in = fd.layer_shapes[layer]
    return fd.per_layer[layer].reshape(d_out, d_in).sum(axis=1)
