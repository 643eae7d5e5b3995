"""Procedural multi-modal pedestrian scenarios with a known labelling rule.

Each sample draws five independent standardised cues, one per modality:

* ``velocity``   lateral displacement toward the road centre (bbox track, flow)
* ``heading``    body lean toward the road (pose skeleton, crop blob tilt)
* ``curb``       how close the curb is to the pedestrian (road band width in
                 the semantic masks)
* ``appearance`` clothing/attention colour cue (local crop only)
* ``ego``        ego-vehicle slowing down (background flow magnitude)

The crossing label is 1 iff the weighted evidence sum(sqrt(w_k) * cue_k) is
positive, so the signal weights are the fractions of label variance each cue
explains.  Label noise flips a label with probability sigma / 2.
"""

from __future__ import annotations

import json
import logging
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    BOX_ASPECT,
    FRAME_H,
    FRAME_W,
    DatasetManifest,
    ManifestRecord,
    SequenceSample,
    snap_unit,
    write_sample,
)
from .metrics import roc_auc

log = logging.getLogger(__name__)

CUES = ("velocity", "heading", "curb", "appearance", "ego")
# modality that renders each cue, in ScenarioParams.weights order
CUE_MODALITY = {"velocity": "bbox", "heading": "pose", "curb": "semantic", "appearance": "local", "ego": "flow"}
DEFAULT_WEIGHTS = (0.3, 0.2, 0.2, 0.15, 0.15)
HEADROOM_MIN_SAMPLES = 200

HORIZON = 0.45
SKY_LINE = 0.2
# lateral distance of the pedestrian from the road centre at mid-window, and its swing with the cue;
# chosen so the whole skeleton stays inside the frame under a 10 degree roll about the frame centre
PED_MID = 0.18
PED_SPAN = 0.085
MAX_DISPLACEMENT = 0.08  # lateral distance covered over one window at full cue
MAX_LEAN = math.radians(35)

# COCO-18 skeleton in body units: origin at box centre, y down, height 1
POSE_TEMPLATE = np.array([
    (0.00, -0.42), (0.00, -0.32),
    (-0.10, -0.30), (-0.13, -0.12), (-0.14, 0.04),
    (0.10, -0.30), (0.13, -0.12), (0.14, 0.04),
    (-0.06, 0.02), (-0.07, 0.25), (-0.07, 0.47),
    (0.06, 0.02), (0.07, 0.25), (0.07, 0.47),
    (-0.03, -0.45), (0.03, -0.45), (-0.06, -0.43), (0.06, -0.43),
])  # fmt: skip


class HeadroomError(RuntimeError):
    pass


@dataclass
class ScenarioParams:
    n_samples: int = 500
    n_frames: int = 4
    local_size: int = 32
    global_size: int = 32
    noise: float = 0.1
    # bbox-motion, pose, semantic road distance, local appearance, flow
    weights: tuple = DEFAULT_WEIGHTS
    seed: int = 0
    test_fraction: float = 0.2
    headroom_limit: float | None = 0.85

    def validate(self) -> "ScenarioParams":
        if self.n_samples < 0:
            raise ValueError(f"n_samples must be >= 0, got {self.n_samples}")
        if self.n_frames < 2 or self.local_size < 8 or self.global_size < 8:
            raise ValueError("need n_frames >= 2 and resolutions >= 8")
        if not 0 <= self.noise <= 1:
            raise ValueError(f"noise must be in [0, 1], got {self.noise}")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (5,) or (w < 0).any() or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ValueError(f"weights must be 5 non-negative numbers summing to 1, got {self.weights}")
        if not 0 <= self.test_fraction < 1:
            raise ValueError(f"test_fraction must be in [0, 1), got {self.test_fraction}")
        return self

    @property
    def n_test(self) -> int:
        return int(round(self.n_samples * self.test_fraction))


@dataclass
class ScenarioState:
    """Standardised latent cues (each N(0, 1) when sampled)."""

    velocity: float = 0.0
    heading: float = 0.0
    curb: float = 0.0
    appearance: float = 0.0
    ego: float = 0.0
    extras: dict = field(default_factory=dict)

    def cues(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in CUES])


def evidence(state: ScenarioState, weights=DEFAULT_WEIGHTS) -> float:
    return float(np.sqrt(np.asarray(weights, dtype=float)) @ state.cues())


def label_rule(state: ScenarioState, weights=DEFAULT_WEIGHTS) -> int:
    """Crossing (1) iff the weighted cue evidence is strictly positive."""
    return int(evidence(state, weights) > 0)


def _unit(z):
    # saturating map of a standardised cue to [-1, 1]
    return float(np.clip(z / 2.5, -1.0, 1.0))


def _ellipse(h, w, cy, cx, ry, rx, angle):
    rows, cols = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    dy, dx = rows - cy, cols - cx
    c, s = math.cos(angle), math.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def render(state: ScenarioState, params: ScenarioParams, rng: np.random.Generator) -> SequenceSample:
    """Render one consistent multi-modal clip for ``state`` (label left at 0)."""
    n, L, G = params.n_frames, params.local_size, params.global_size
    side = 1 if rng.random() < 0.5 else -1  # +1: pedestrian right of the road
    toward = -side  # image-x direction toward the road centre
    t = np.arange(n) / (n - 1)

    # trajectory (normalised frame coords)
    # pedestrians heading for the road are nearer the curb and still approaching it
    cv = _unit(state.velocity)
    d_mid = PED_MID - PED_SPAN * cv + rng.uniform(-0.005, 0.005)
    dist = d_mid - MAX_DISPLACEMENT * cv * (t - 0.5)
    x = 0.5 + side * dist
    height = 0.28 + rng.uniform(-0.02, 0.02)
    foot = 0.8 + rng.uniform(-0.02, 0.02)
    y = np.full(n, foot - height / 2)
    bbox = snap_unit(np.clip(np.column_stack([x, y, np.full(n, height)]), 0, 1))

    # pose: template scaled by box height, leaned about the feet toward the road
    lean = MAX_LEAN * _unit(state.heading) * toward
    phase = rng.uniform(0, 2 * np.pi)
    pose = np.zeros((n, 36))
    h_px = height * FRAME_H
    for k in range(n):
        pts = POSE_TEMPLATE.copy()
        swing = 0.03 * math.sin(phase + np.pi * k / 2)
        pts[[9, 10], 0] += swing
        pts[[12, 13], 0] -= swing
        # rotate about the ankles; positive lean tips the head toward +x
        fx, fy = pts[:, 0], pts[:, 1] - 0.47
        c, s = math.cos(lean), math.sin(lean)
        rx, ry = c * fx - s * fy, s * fx + c * fy
        px = x[k] * FRAME_W + rx * h_px
        py = y[k] * FRAME_H + (ry + 0.47) * h_px
        pose[k] = np.column_stack([px / FRAME_W, py / FRAME_H]).reshape(36)
    pose = snap_unit(np.clip(pose, 0, 1))

    # local crop: textured background, tilted body blob coloured by the appearance cue
    ca = _unit(state.appearance)
    base = rng.uniform(0.35, 0.65)
    texture = rng.normal(0, 0.04, size=(3, L, L))
    colour = np.array([0.5 + 0.45 * ca, 0.5, 0.5 - 0.45 * ca])
    local = np.empty((3, n, L, L))
    for k in range(n):
        bob = 0.5 * (k % 2)
        body = _ellipse(L, L, 0.6 * L + bob, L / 2, 0.38 * L, 0.22 * L, lean)
        head = _ellipse(L, L, 0.16 * L + bob, L / 2 + math.sin(lean) * 0.3 * L, 0.1 * L, 0.1 * L, 0)
        frame = base + texture
        frame[:, body] = colour[:, None]
        frame[:, head] = np.array([0.8, 0.65, 0.55])[:, None]
        local[:, k] = frame
    local = np.clip(local, 0, 1)

    # semantic masks: sky / buildings / ground, perspective road band, one vehicle, the pedestrian
    rows = (np.arange(G) + 0.5) / G
    cols = (np.arange(G) + 0.5) / G
    R, C = np.meshgrid(rows, cols, indexing="ij")
    half_bottom = 0.30 + 0.15 * _unit(state.curb)
    ground = np.clip((R - HORIZON) / (1 - HORIZON), 0, None)
    cls = np.full((G, G), 7)
    cls[R < HORIZON] = 6
    cls[R < SKY_LINE] = 5
    for _ in range(2):
        vx, vw = rng.uniform(0, 1), rng.uniform(0.05, 0.15)
        cls[(R >= 0.3) & (R < HORIZON) & (np.abs(C - vx) < vw)] = 4
    cx0, cw = rng.uniform(0.15, 0.25), rng.uniform(0.2, 0.45)
    cls[(R >= SKY_LINE + 0.05) & (R < SKY_LINE + 0.12) & (np.abs(C - cx0) < cw / 4)] = 3
    road = (R >= HORIZON) & (np.abs(C - 0.5) < half_bottom * ground)
    cls[road] = 1
    car_y = rng.uniform(0.55, 0.75)
    car_x = 0.5 + rng.uniform(-0.5, 0.5) * half_bottom * (car_y - HORIZON) / (1 - HORIZON)
    car = (np.abs(R - car_y) < 0.05) & (np.abs(C - car_x) < 0.06)
    cls[car] = 2
    width = BOX_ASPECT * height * FRAME_H / FRAME_W
    semantic = np.zeros((8, n, G, G))
    ped_masks = []
    for k in range(n):
        ck = cls.copy()
        ped = (np.abs(C - x[k]) < width / 2) & (np.abs(R - y[k]) < height / 2)
        ck[ped] = 0
        ped_masks.append(ped)
        semantic[:, k] = np.eye(8)[ck].transpose(2, 0, 1)

    # flow: radial expansion about the vanishing point scaled by ego speed, pedestrian moves laterally
    ego_speed = 1.0 - 0.7 * _unit(state.ego)
    gain = 0.08 * ego_speed
    u_bg = gain * (C - 0.5) * G * (R >= SKY_LINE)
    v_bg = gain * (R - HORIZON) * G * (R >= SKY_LINE)
    step = -side * MAX_DISPLACEMENT * cv / (n - 1) * G
    flow = np.zeros((2, n, G, G))
    for k in range(n):
        u, v = u_bg.copy(), v_bg.copy()
        u[ped_masks[k]] = step
        v[ped_masks[k]] = 0.0
        flow[0, k], flow[1, k] = u, v

    return SequenceSample(
        bbox=bbox,
        pose=pose,
        local=local.astype(np.float32),
        semantic=semantic.astype(np.float32),
        flow=flow.astype(np.float32),
        label=0,
    )


def sample_state(rng: np.random.Generator) -> ScenarioState:
    return ScenarioState(*rng.standard_normal(5))


def make_sample(params: ScenarioParams, index: int) -> tuple[SequenceSample, ScenarioState]:
    """Deterministic sample ``index``; its stream depends only on (seed, index)."""
    rng = np.random.default_rng([params.seed, index])
    state = sample_state(rng)
    label = label_rule(state, params.weights)
    if rng.random() < params.noise / 2:
        label = 1 - label
    sample = render(state, params, rng)
    sample.label = label
    sample.source_id = f"synth-{params.seed}-{index:05d}"
    t_end = int(rng.integers(params.n_frames + 60, 600))
    sample.tte = t_end + int(rng.integers(30, 61))
    state.extras["t_end"] = t_end
    return sample, state


def fit_logistic(X, y, ridge=1e-6, iters=50):
    """Newton-Raphson logistic regression with intercept; returns the weight vector."""
    X = np.column_stack([np.ones(len(X)), np.asarray(X, dtype=float).reshape(len(X), -1)])
    y = np.asarray(y, dtype=float)
    w = np.zeros(X.shape[1])
    for _ in range(iters):
        p = 1 / (1 + np.exp(-np.clip(X @ w, -30, 30)))
        grad = X.T @ (p - y) + ridge * w
        hess = (X * (p * (1 - p))[:, None]).T @ X + ridge * np.eye(len(w))
        delta = np.linalg.solve(hess, grad)
        w -= delta
        if np.abs(delta).max() < 1e-10:
            break
    return w


def logistic_scores(w, X):
    X = np.column_stack([np.ones(len(X)), np.asarray(X, dtype=float).reshape(len(X), -1)])
    return X @ w


def modality_oracle_aucs(states, labels, train_fraction=0.5) -> dict[str, float]:
    """Held-out AUC of a logistic fit on each single latent cue."""
    cues = np.array([s.cues() for s in states])
    labels = np.asarray(labels)
    n_fit = max(1, int(len(labels) * train_fraction))
    out = {}
    for j, name in enumerate(CUES):
        w = fit_logistic(cues[:n_fit, j], labels[:n_fit])
        held = labels[n_fit:]
        if held.min() == held.max():
            continue
        out[CUE_MODALITY[name]] = roc_auc(logistic_scores(w, cues[n_fit:, j]), held)
    return out


def generate(params: ScenarioParams, out_dir) -> DatasetManifest:
    """Write ``params.n_samples`` samples, manifest.jsonl and dataset.json under ``out_dir``."""
    params.validate()
    out = Path(out_dir)
    samples, states = [], []
    for i in range(params.n_samples):
        s, st = make_sample(params, i)
        samples.append(s)
        states.append(st)
    labels = [s.label for s in samples]
    oracle = {}
    if params.n_samples >= HEADROOM_MIN_SAMPLES and len(set(labels)) == 2:
        oracle = modality_oracle_aucs(states, labels)
        multi = sum(w > 0 for w in params.weights) > 1
        if params.headroom_limit is not None and multi:
            worst = max(oracle, key=oracle.get)
            if oracle[worst] > params.headroom_limit:
                raise HeadroomError(
                    f"single-modality oracle for {worst} reaches AUC {oracle[worst]:.3f} > {params.headroom_limit}"
                )
    if out.exists():
        shutil.rmtree(out / "samples", ignore_errors=True)
    out.mkdir(parents=True, exist_ok=True)
    n_train = params.n_samples - params.n_test
    records = []
    for i, s in enumerate(samples):
        rel = f"samples/{i:05d}"
        write_sample(s, out / rel)
        records.append(ManifestRecord(rel, s.label, "train" if i < n_train else "test", s.tte))
    manifest = DatasetManifest(records, FRAME_W, FRAME_H, out)
    manifest.write(out)
    info = {
        "frame": {"h": FRAME_H, "w": FRAME_W},
        "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(params).items()},
        "n_train": n_train,
        "n_test": params.n_samples - n_train,
        "positive_fraction": round(float(np.mean(labels)), 6) if labels else None,
        "oracle_auc": {k: round(v, 6) for k, v in sorted(oracle.items())},
    }
    (out / "dataset.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d samples to %s", params.n_samples, out)
    return manifest


def generate_in_memory(params: ScenarioParams) -> tuple[list[SequenceSample], list[ScenarioState]]:
    params.validate()
    pairs = [make_sample(params, i) for i in range(params.n_samples)]
    return [p[0] for p in pairs], [p[1] for p in pairs]
