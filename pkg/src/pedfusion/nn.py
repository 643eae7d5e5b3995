"""Layer blocks: bbox/pose MLP, shared 3-D conv encoder, self-attention, classifier head."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor

FEATURE_WIDTH = 128
HEAD_HIDDEN = 64
STEM_CHANNELS = 16
TRUNK_CHANNELS = (16, 32, 64, 128)
MODALITY_CHANNELS = {"local": 3, "semantic": 8, "flow": 2}


class ModalityError(ValueError):
    pass


class Parameter(Tensor):
    """A trainable leaf.  ``fc`` marks fully-connected weights (subject to L2 decay)."""

    __slots__ = ("fc", "fan_in", "fan_out")

    def __init__(self, shape, dtype=np.float32, name=None, fc=False, fan_in=None, fan_out=None):
        super().__init__(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)
        self.fc = fc
        # None marks a bias (zero-initialised)
        self.fan_in = fan_in
        self.fan_out = fan_out


class Module:
    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, dict):
                for k in sorted(value):
                    if isinstance(value[k], Module):
                        yield from value[k].named_parameters(f"{name}.{k}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]


class Linear(Module):
    def __init__(self, n_in, n_out, dtype=np.float32, fc=True):
        self.weight = Parameter((n_in, n_out), dtype, fc=fc, fan_in=n_in, fan_out=n_out)
        self.bias = Parameter((n_out,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        n_in = self.weight.shape[0]
        if x.shape[-1] != n_in:
            raise DimensionError(f"linear layer expects width {n_in}, got input {x.shape}")
        if x.ndim == 1:
            return T.reshape(T.bias_add(T.matmul(T.reshape(x, (1, n_in)), self.weight), self.bias), (-1,))
        return T.bias_add(T.matmul(x, self.weight), self.bias)


class MlpEmbedder(Module):
    """Three linear layers with ReLU in between: per-frame bbox (+pose) -> 128."""

    def __init__(self, n_in, width=FEATURE_WIDTH, dtype=np.float32):
        self.layers = [Linear(n_in, width, dtype), Linear(width, width, dtype), Linear(width, width, dtype)]

    @property
    def in_width(self):
        return self.layers[0].weight.shape[0]

    def __call__(self, v: Tensor) -> Tensor:
        h = v
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = T.relu(h)
        return h


class Conv3d(Module):
    def __init__(self, c_in, c_out, k, dtype=np.float32, padding=0):
        fan = k**3
        self.weight = Parameter((c_out, c_in, k, k, k), dtype, fan_in=c_in * fan, fan_out=c_out * fan)
        self.bias = Parameter((c_out,), dtype)
        self.padding = padding

    def __call__(self, x):
        return T.conv3d(x, self.weight, self.bias, stride=1, padding=self.padding)


def _pool_kernel(shape):
    # halve each of depth/height/width only while it is larger than one
    return tuple(2 if n > 1 else 1 for n in shape[1:])


class ConvEncoder(Module):
    """Per-modality 1x1x1 stems feeding one shared 4-block 3-D conv trunk."""

    def __init__(self, modalities, dtype=np.float32):
        self.stems = {m: Conv3d(MODALITY_CHANNELS[m], STEM_CHANNELS, 1, dtype) for m in modalities}
        chans = (STEM_CHANNELS,) + TRUNK_CHANNELS
        self.trunk = [Conv3d(chans[i], chans[i + 1], 3, dtype, padding=1) for i in range(len(TRUNK_CHANNELS))]

    def __call__(self, x: Tensor, modality: str) -> Tensor:
        if modality not in self.stems:
            raise ModalityError(f"encoder has no stem for modality {modality!r} (has {sorted(self.stems)})")
        want = MODALITY_CHANNELS[modality]
        if x.ndim != 4 or x.shape[0] != want:
            raise ModalityError(f"{modality} input must have {want} channels (C x N x H x W), got {x.shape}")
        h = self.stems[modality](x)
        for conv in self.trunk:
            h = T.relu(conv(h))
            h = T.max_pool3d(h, _pool_kernel(h.shape))
        return T.mean(h, axis=(1, 2, 3))


class AttentionModule(Module):
    """Single-head scaled dot-product self-attention with a residual path.

    ``refine`` maps M x d -> M x d as X + softmax(XWq (XWk)^T / sqrt(d)) XWv;
    ``reduce`` additionally averages the rows into one d-vector.
    """

    def __init__(self, mode, width=FEATURE_WIDTH, dropout=0.5, dtype=np.float32):
        if mode not in ("reduce", "refine"):
            raise ValueError(f"attention mode must be 'reduce' or 'refine', got {mode!r}")
        self.mode = mode
        self.p = dropout
        self.wq = Parameter((width, width), dtype, fan_in=width, fan_out=width)
        self.wk = Parameter((width, width), dtype, fan_in=width, fan_out=width)
        self.wv = Parameter((width, width), dtype, fan_in=width, fan_out=width)

    def weights(self, X: Tensor) -> Tensor:
        d = self.wq.shape[0]
        if X.ndim != 2 or X.shape[1] != d or X.shape[0] < 1:
            raise DimensionError(f"attention expects M x {d} with M >= 1, got {X.shape}")
        q = T.matmul(X, self.wq)
        k = T.matmul(X, self.wk)
        return T.softmax(T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d)), axis=1)

    def __call__(self, X: Tensor, training=False, rng=None) -> Tensor:
        a = T.dropout(self.weights(X), self.p, training, rng)
        out = T.add(X, T.matmul(a, T.matmul(X, self.wv)))
        return T.mean(out, axis=0) if self.mode == "reduce" else out


class ClassifierHead(Module):
    def __init__(self, width=FEATURE_WIDTH, hidden=HEAD_HIDDEN, dtype=np.float32):
        self.fc1 = Linear(width, hidden, dtype)
        self.fc2 = Linear(hidden, 2, dtype)

    def logits(self, f: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(f)))

    def __call__(self, f: Tensor) -> Tensor:
        """[p_crossing, p_not_crossing]."""
        return T.softmax(self.logits(f), axis=-1)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of -log p[i, label_i] with probabilities clamped at 1e-12.

    Column 0 is the crossing probability, so label 1 (crossing) selects column 0.
    """
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[1] != 2 or labels.shape != (probs.shape[0],):
        raise DimensionError(f"cross_entropy: probs {probs.shape} vs labels {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError(f"labels must be 0 or 1, got {np.unique(labels).tolist()}")
    onehot = np.zeros(probs.shape, dtype=probs.dtype)
    onehot[np.arange(len(labels)), np.where(labels == 1, 0, 1)] = 1
    picked = T.sum_(T.mul(probs, Tensor(onehot)), axis=1)
    return T.neg(T.mean(T.log(T.clamp_min(picked, 1e-12))))
