"""Training, evaluation, ablation and gradient-check drivers behind the CLI."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from . import tensor as T
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import augment as augment_sample
from .fusion import LADDER, TINY, ModelDims, VariantSpec, build
from .metrics import MetricsReport, evaluate
from .optim import make_optimizer, predict, train_epoch
from .synthgen import ScenarioParams, make_sample

GRAD_H = 1e-5
GRAD_FLOOR = 1e-6
OP_TOL = 1e-5
MODEL_TOL = 1e-4


def dims_of(samples) -> ModelDims:
    s = samples[0]
    n = s.n_frames
    local = s.local.shape[-1] if s.local is not None else 1
    glob = s.semantic.shape[-1] if s.semantic is not None else (s.flow.shape[-1] if s.flow is not None else 1)
    return ModelDims(n, local, glob)


def evaluate_model(model, samples, threshold=0.5) -> MetricsReport:
    return evaluate(predict(model, samples), [s.label for s in samples], threshold)


def _fmt_auc(v):
    return "nan" if v is None else f"{v:.6f}"


@dataclass
class TrainResult:
    model: object
    log: list[str]
    report: MetricsReport | None


def train_run(cfg: RunConfig, train, test=None, out_dir=None, train_auc=True, echo=None) -> TrainResult:
    """Train one variant; with ``out_dir`` write config.txt, train.log and per-epoch checkpoints.

    Initialisation uses ``seed`` and the training stream (shuffles, dropout,
    augmentation) uses the independent stream ``[seed, 1]``.
    """
    cfg.validate()
    dims = dims_of(train)
    model = build(cfg.variant, dims, seed=cfg.seed, dropout=cfg.dropout)
    opt = make_optimizer(model, lr=cfg.lr, fc_decay=cfg.fc_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    aug = augment_sample if cfg.augment else None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
    log = []

    def emit(line):
        log.append(line)
        if echo is not None:
            echo(line)
        if out is not None:
            (out / "train.log").write_text("".join(s + "\n" for s in log))

    for epoch in range(1, cfg.epochs + 1):
        loss = train_epoch(model, opt, train, cfg.batch, rng, aug)
        auc = evaluate_model(model, train, cfg.threshold).auc if train_auc else None
        emit(f"epoch={epoch} loss={loss:.6f} train_auc={_fmt_auc(auc)}")
        if out is not None:
            save_checkpoint(model, out / "checkpoints" / f"epoch_{epoch:03d}.ckpt", epoch, cfg.seed,
                            {"loss": round(loss, 6), "train_auc": None if auc is None else round(auc, 6)})
    report = None
    if test:
        report = evaluate_model(model, test, cfg.threshold)
        emit(f"final split=test n={len(test)} {report.to_record()}")
    if out is not None:
        save_checkpoint(model, out / "final.ckpt", cfg.epochs, cfg.seed,
                        {} if report is None else {"test_auc": report.auc, "test_f1": round(report.f1, 6)})
    return TrainResult(model, log, report)


# ablation


@dataclass
class AblationRow:
    variant: str
    auc: float
    f1: float
    aucs: list
    f1s: list

    def to_line(self):
        return f"{VariantSpec.from_name(self.variant).label}\t{self.auc:.4f}\t{self.f1:.4f}"


def ablate(cfg: RunConfig, train, test, variants=None, seeds=None, echo=None) -> list[AblationRow]:
    """Train every variant under identical config for seeds ``seed .. seed+seeds-1``; rows in ladder order."""
    names = [VariantSpec.from_name(v).name for v in (variants or LADDER)]
    names = [v for v in LADDER if v in names]
    seed_list = list(range(cfg.seed, cfg.seed + (seeds or cfg.seeds)))
    rows = []
    for v in names:
        aucs, f1s = [], []
        for seed in seed_list:
            t0 = time.perf_counter()
            res = train_run(replace(cfg, variant=v, seed=seed), train, test, train_auc=False)
            aucs.append(res.report.auc if res.report.auc is not None else float("nan"))
            f1s.append(res.report.f1)
            if echo is not None:
                echo(f"run variant={v} seed={seed} auc={aucs[-1]:.6f} f1={f1s[-1]:.6f} "
                     f"seconds={time.perf_counter() - t0:.1f}")
        rows.append(AblationRow(v, float(np.mean(aucs)), float(np.mean(f1s)), aucs, f1s))
    return rows


def format_table(rows) -> str:
    return "variant\tAUC\tF1\n" + "".join(r.to_line() + "\n" for r in rows)


def ladder_steps(rows, tol=0.02) -> list[bool]:
    """Whether each consecutive step of the ladder keeps AUC within ``tol`` of non-decreasing."""
    return [b.auc >= a.auc - tol for a, b in zip(rows, rows[1:])]


# gradient checking


@dataclass
class CheckResult:
    op: str
    error: float
    tol: float
    where: str

    @property
    def ok(self):
        return bool(self.error <= self.tol)

    def to_line(self):
        status = "ok" if self.ok else "FAIL"
        return f"op={self.op} max_rel_err={self.error:.3e} tol={self.tol:.0e} element={self.where} status={status}"


def _op_cases(rng):
    """(name, fn, inputs[, step]); ops are looked up on the tensor module at call time."""

    def u(*shape, lo=-1.0, hi=1.0):
        return rng.uniform(lo, hi, shape)

    def away(*shape):
        # keep clear of kinks by more than the step size
        return rng.choice([-1.0, 1.0], shape) * rng.uniform(0.1, 1.0, shape)

    def drop(x):
        return T.dropout(x, 0.3, True, np.random.default_rng(7))

    # conv3d is bilinear, so a larger step costs no truncation error and cuts rounding noise
    conv_h = 1e-4
    return [
        ("add", lambda a, b: T.add(a, b), [u(3, 4), u(4)]),
        ("bias_add", lambda a, b: T.bias_add(a, b), [u(3, 4), u(4)]),
        ("neg", lambda a: T.neg(a), [u(3, 4)]),
        ("mul", lambda a, b: T.mul(a, b), [u(3, 4), u(3, 1)]),
        ("scale", lambda a: T.scale(a, 0.37), [u(5)]),
        ("relu", lambda a: T.relu(a), [away(3, 4)]),
        ("log", lambda a: T.log(a), [u(3, 4, lo=0.5, hi=2.0)]),
        ("clamp_min", lambda a: T.clamp_min(a, 0.0), [away(3, 4)]),
        ("reshape", lambda a: T.reshape(a, (4, 3)), [u(3, 4)]),
        ("transpose", lambda a: T.transpose(a), [u(3, 4)]),
        ("stack_concat", lambda a, b, c: T.stack_concat([a, b, c]), [u(4), u(4), u(4)]),
        ("sum", lambda a: T.sum_(a, axis=1), [u(3, 4)]),
        ("mean", lambda a: T.mean(a, axis=(1, 2)), [u(2, 3, 4)]),
        ("global_average_pool", lambda a: T.global_average_pool(a), [u(6, 3)]),
        ("matmul", lambda a, b: T.matmul(a, b), [u(3, 4), u(4, 2)]),
        ("softmax", lambda a: T.softmax(a, axis=1), [u(3, 5)]),
        ("dropout", drop, [u(4, 5)]),
        ("conv3d", lambda x, w, b: T.conv3d(x, w, b, padding=1), [u(3, 5, 5, 5), u(4, 3, 3, 3, 3), u(4)], conv_h),
        ("conv3d_stride2", lambda x, w: T.conv3d(x, w, stride=2), [u(2, 5, 5, 5), u(3, 2, 3, 3, 3)], conv_h),
        ("max_pool3d", lambda x: T.max_pool3d(x, 2), [u(2, 4, 4, 4)]),
        ("attention", _attention_case, [u(3, 6), u(6, 6), u(6, 6), u(6, 6)]),
        ("cross_entropy", lambda z: nn.cross_entropy(T.softmax(z, axis=1), [1, 0, 1]), [u(3, 2)]),
    ]


def _attention_case(X, wq, wk, wv):
    att = nn.AttentionModule("refine", width=6, dropout=0.0, dtype=np.float64)
    att.wq, att.wk, att.wv = wq, wk, wv
    return att(X)


def check_ops(seed=0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn, inputs, *step in _op_cases(rng):
        err, (arg, idx) = T.gradcheck(fn, inputs, h=step[0] if step else GRAD_H, seed=seed, floor=GRAD_FLOOR)
        shape = np.shape(inputs[arg])
        out.append(CheckResult(name, err, OP_TOL, f"input{arg}{[int(i) for i in np.unravel_index(idx, shape)]}"))
    return out


def check_model(seed=0, per_param=6, variant="BLGPM") -> CheckResult:
    """Whole-model cross-entropy gradient at tiny dims (batch 2), sampled entries of every parameter."""
    params = ScenarioParams(n_samples=2, n_frames=TINY.n_frames, local_size=TINY.local_size,
                            global_size=TINY.global_size, seed=seed)
    batch = [make_sample(params, i)[0] for i in range(2)]
    labels = [s.label for s in batch]
    model = build(variant, TINY, seed=seed, dtype=np.float64, dropout=0.5)
    rng = np.random.default_rng([seed, 2])
    for _, p in model.named_parameters():
        if p.fan_in is None:
            # nonzero biases keep ReLUs away from exact zeros
            p.data[...] = rng.uniform(-0.1, 0.1, p.shape)

    def loss():
        return nn.cross_entropy(model(batch), labels)

    named = list(model.named_parameters())
    model.zero_grad()
    T.backward(loss(), params=[p for _, p in named])
    worst, where = 0.0, ""
    for name, p in named:
        idx = rng.choice(p.data.size, min(per_param, p.data.size), replace=False)
        num = T.numerical_grad(lambda: float(loss().data), p.data, GRAD_H, idx)
        err = T.relative_error(p.grad.reshape(-1)[idx], num, GRAD_FLOOR)
        if err.max() > worst:
            k = int(err.argmax())
            worst, where = float(err.max()), f"{name}{[int(i) for i in np.unravel_index(idx[k], p.shape)]}"
    return CheckResult(f"model_{VariantSpec.from_name(variant).name}", worst, MODEL_TOL, where)


def gradcheck_suite(seed=0) -> list[CheckResult]:
    return check_ops(seed) + [check_model(seed)]
