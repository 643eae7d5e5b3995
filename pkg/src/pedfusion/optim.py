"""Adam with decoupled decay switched off and L2 decay on fully-connected weights."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .fusion import ConfigurationError
from .nn import cross_entropy

FULL_LR = 5e-7
DESK_LR = 1e-3


class NumericError(FloatingPointError):
    pass


class AdamW:
    """Bias-corrected Adam.

    ``weight_decay`` is the decoupled (AdamW) decay applied to every parameter,
    off by default.  ``fc_decay`` is added to the gradient of parameters tagged
    ``fc`` before the moment update, i.e. a plain L2 penalty on fully-connected
    weights.
    """

    def __init__(self, params, lr=DESK_LR, betas=(0.9, 0.999), eps=1e-8, fc_decay=1e-4, weight_decay=0.0, names=None):
        self.params = list(params)
        self.names = list(names) if names is not None else [getattr(p, "name", None) or f"param{i}" for i, p in enumerate(self.params)]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.fc_decay = fc_decay
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for name, p in zip(self.names, self.params):
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient in parameter {name}; step aborted")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.fc_decay and getattr(p, "fc", False):
                g = g + self.fc_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.weight_decay:
                p.data -= (self.lr * self.weight_decay) * p.data
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)


def make_optimizer(model, lr=DESK_LR, fc_decay=1e-4) -> AdamW:
    named = list(model.named_parameters())
    return AdamW([p for _, p in named], lr=lr, fc_decay=fc_decay, names=[n for n, _ in named])


def train_step(model, optimizer, batch, rng, training=True) -> float:
    probs = model.forward(batch, training=training, rng=rng)
    loss = cross_entropy(probs, [s.label for s in batch])
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    optimizer.zero_grad()
    T.backward(loss, params=optimizer.params)
    optimizer.step()
    optimizer.zero_grad()
    return value


def train_epoch(model, optimizer, dataset, batch_size=2, rng=None, augment=None) -> float:
    """One shuffled pass; returns the mean batch loss.

    ``rng`` drives the shuffle, dropout and (optional) ``augment(sample, rng)``.
    """
    if not dataset:
        raise ConfigurationError("cannot train on an empty dataset")
    if batch_size < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {batch_size}")
    order = rng.permutation(len(dataset))
    losses = []
    for start in range(0, len(order), batch_size):
        batch = [dataset[i] for i in order[start : start + batch_size]]
        if augment is not None:
            batch = [augment(s, rng) for s in batch]
        losses.append(train_step(model, optimizer, batch, rng))
    return float(np.mean(losses))


def predict(model, samples, batch_size=16) -> np.ndarray:
    """Crossing probabilities in eval mode."""
    out = []
    for start in range(0, len(samples), batch_size):
        out.append(model.forward(samples[start : start + batch_size]).data[:, 0])
    return np.concatenate(out) if out else np.zeros(0)
