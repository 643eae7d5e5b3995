"""The full multi-modal fusion model and its ablation variants.

Per sample the full variant computes::

    f_b^t  = mlp(bbox_t ⊕ pose_t)                      t = 1..N
    f_a    = A_reduce([f_b^1; ...; f_b^N])
    f_env  = A_reduce([f_cg; f_cl])
    f_mot  = A_reduce([f_co; f_env])
    f_H    = A_refine([f_a; f_mot; f_env])^T           128 x K, K = 3
    probs  = head(GAP(f_H))

Partial variants drop absent branches from the outer stack; with a single
remaining row the outer attention is bypassed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import (
    FEATURE_WIDTH,
    AttentionModule,
    ClassifierHead,
    ConvEncoder,
    MlpEmbedder,
    Module,
    Parameter,
)
from .tensor import Tensor

BBOX_WIDTH = 3
POSE_WIDTH = 36


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class VariantSpec:
    use_local: bool = False
    use_global: bool = False
    use_pose: bool = False
    use_motion: bool = False
    use_bbox: bool = True

    @property
    def name(self) -> str:
        return "B" + "".join(c for c, on in zip("LGPM", self._flags()) if on)

    @property
    def label(self) -> str:
        return "+".join(self.name)

    def _flags(self):
        return (self.use_local, self.use_global, self.use_pose, self.use_motion)

    def modalities(self) -> list[str]:
        out = []
        if self.use_local:
            out.append("local")
        if self.use_global:
            out.append("semantic")
        if self.use_motion:
            out.append("flow")
        return out

    def validate(self) -> "VariantSpec":
        if self not in PRESETS.values():
            raise ConfigurationError(
                f"flag combination {self._flags()} is not one of the presets {list(PRESETS)}"
            )
        return self

    @classmethod
    def from_name(cls, name: str) -> "VariantSpec":
        key = name.replace("+", "").strip().upper()
        if key not in PRESETS:
            raise ConfigurationError(f"unknown variant {name!r}; choose from {list(PRESETS)}")
        return PRESETS[key]


PRESETS = {
    "B": VariantSpec(),
    "BL": VariantSpec(use_local=True),
    "BLG": VariantSpec(use_local=True, use_global=True),
    "BLGP": VariantSpec(use_local=True, use_global=True, use_pose=True),
    "BLGPM": VariantSpec(use_local=True, use_global=True, use_pose=True, use_motion=True),
}
LADDER = tuple(PRESETS)


@dataclass(frozen=True)
class ModelDims:
    """Clip geometry the model is built for: frames, local crop side, global field side."""

    n_frames: int = 4
    local_size: int = 32
    global_size: int = 32

    def as_tuple(self):
        return (self.n_frames, self.local_size, self.global_size)


DESK = ModelDims(4, 32, 32)
FULL = ModelDims(16, 112, 112)
TINY = ModelDims(2, 8, 8)


class FusionModel(Module):
    def __init__(self, variant: VariantSpec, dims: ModelDims = DESK, dtype=np.float32, dropout=0.5):
        self.variant = variant.validate()
        self.dims = dims
        self.dtype = np.dtype(dtype)
        self.mlp = MlpEmbedder(BBOX_WIDTH + (POSE_WIDTH if variant.use_pose else 0), dtype=dtype)
        self.temporal = AttentionModule("reduce", dropout=dropout, dtype=dtype)
        if variant.use_local:
            self.encoder = ConvEncoder(variant.modalities(), dtype=dtype)
            self.outer = AttentionModule("refine", dropout=dropout, dtype=dtype)
        if variant.use_global:
            self.env = AttentionModule("reduce", dropout=dropout, dtype=dtype)
        if variant.use_motion:
            self.motion = AttentionModule("reduce", dropout=dropout, dtype=dtype)
        self.head = ClassifierHead(dtype=dtype)

    def set_dropout(self, p: float):
        for m in (getattr(self, k, None) for k in ("temporal", "outer", "env", "motion")):
            if m is not None:
                m.p = p

    def _tensor(self, arr, what, sample):
        if arr is None:
            src = getattr(sample, "source_id", "?")
            raise ConfigurationError(f"variant {self.variant.label} needs {what}, missing in sample {src}")
        return Tensor(np.asarray(arr, dtype=self.dtype))

    def features(self, sample, training=False, rng=None) -> dict:
        """Intermediate features of one sample (f_a, f_cl, f_env, f_mot, f_H, fused)."""
        v = self.variant
        bbox = self._tensor(sample.bbox, "bbox", sample)
        if v.use_pose:
            pose = self._tensor(sample.pose, "pose", sample)
            x = Tensor(np.concatenate([bbox.data, pose.data], axis=1))
        else:
            x = bbox
        fb = self.mlp(x)
        feats = {"f_a": self.temporal(fb, training, rng)}
        rows = [feats["f_a"]]
        if v.use_local:
            feats["f_cl"] = self.encoder(self._tensor(sample.local, "local crops", sample), "local")
            env = feats["f_cl"]
            if v.use_global:
                feats["f_cg"] = self.encoder(self._tensor(sample.semantic, "semantic masks", sample), "semantic")
                env = self.env(T.stack_concat([feats["f_cg"], feats["f_cl"]]), training, rng)
                feats["f_env"] = env
            if v.use_motion:
                feats["f_co"] = self.encoder(self._tensor(sample.flow, "optical flow", sample), "flow")
                feats["f_mot"] = self.motion(T.stack_concat([feats["f_co"], env]), training, rng)
                rows.append(feats["f_mot"])
            rows.append(env)
        if len(rows) == 1:
            feats["fused"] = rows[0]
        else:
            # refined rows are branches; f_H holds them as columns (128 x K)
            feats["f_H"] = T.transpose(self.outer(T.stack_concat(rows), training, rng))
            feats["fused"] = T.global_average_pool(feats["f_H"])
        return feats

    def forward(self, batch, training=False, rng=None) -> Tensor:
        """B x 2 probabilities [p_crossing, p_not_crossing] per sample."""
        if not batch:
            raise ConfigurationError("empty batch")
        rows = [self.head(self.features(s, training, rng)["fused"]) for s in batch]
        return T.stack_concat(rows)

    __call__ = forward

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def parameter_count(model: Module) -> int:
    return sum(p.data.size for p in model.parameters())


def init_params(model: FusionModel, seed: int = 0, scheme: str = "glorot_uniform") -> FusionModel:
    """Glorot-uniform weights, zero biases, drawn in parameter-name order from one seeded stream."""
    rng = np.random.default_rng(seed)
    for _, p in model.named_parameters():
        p.grad = None
        if scheme == "zeros" or p.fan_in is None:
            p.data[...] = 0
            continue
        if scheme != "glorot_uniform":
            raise ConfigurationError(f"unknown init scheme {scheme!r}")
        limit = np.sqrt(6.0 / (p.fan_in + p.fan_out))
        p.data[...] = rng.uniform(-limit, limit, size=p.shape)
    return model


def build(variant: VariantSpec | str, dims: ModelDims = DESK, seed: int = 0, dtype=np.float32, dropout=0.5):
    if isinstance(variant, str):
        variant = VariantSpec.from_name(variant)
    return init_params(FusionModel(variant, dims, dtype=dtype, dropout=dropout), seed)


__all__ = [
    "BBOX_WIDTH",
    "ConfigurationError",
    "DESK",
    "FEATURE_WIDTH",
    "FusionModel",
    "LADDER",
    "ModelDims",
    "FULL",
    "POSE_WIDTH",
    "PRESETS",
    "Parameter",
    "TINY",
    "VariantSpec",
    "build",
    "init_params",
    "parameter_count",
]
