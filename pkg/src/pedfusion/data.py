"""Sample format, coordinate normalisation, observation windows and augmentation.

On-disk layout of one sample directory::

    local.tnsr     3 x N x H_l x W_l   RGB crop in [0, 1]
    semantic.tnsr  8 x N x H_g x W_g   binary class masks
    flow.tnsr      2 x N x H_g x W_g   (u, v) displacement, grid pixels per frame
    bbox.tnsr      N x 3               (x_centre, y_centre, height), normalised
    pose.tnsr      N x 36              18 (x, y) joints, normalised
    meta.json      {label, n_frames, source_id, tte}

Image modalities and pose are optional; bbox and meta are required.

Normalised coordinates are kept on a 2**-24 grid so that mirroring (x -> 1 - x)
is an exact involution in 32-bit floats.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

FRAME_W = 1920
FRAME_H = 1080
N_CLASSES = 8
SEMANTIC_CLASSES = ("pedestrian", "road", "vehicle", "construction", "vegetation", "sky", "building", "unrecognized")
# COCO-18 joint order
JOINTS = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)  # fmt: skip
FLIP_PAIRS = ((2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17))
FLIP_PERMUTATION = np.arange(18)
for _a, _b in FLIP_PAIRS:
    FLIP_PERMUTATION[_a], FLIP_PERMUTATION[_b] = _b, _a
# width / height of a standing pedestrian box; bbox triples drop the width
BOX_ASPECT = 0.41

MAGIC = b"TNSR"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_GRID = float(2**24)


class FormatError(ValueError):
    pass


class LoadError(OSError):
    pass


class SampleError(ValueError):
    pass


def snap_unit(x):
    """Round to the 2**-24 grid (exactly representable for mirror arithmetic)."""
    return (np.round(np.asarray(x, dtype=np.float64) * _GRID) / _GRID).astype(np.float32)


# tensor files


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}; TNSR stores float32 or float64")
    if arr.ndim > 255 or any(d < 1 for d in arr.shape):
        raise FormatError(f"unsupported shape {arr.shape}")
    head = MAGIC + bytes((VERSION, code, arr.ndim)) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one TNSR record starting at ``offset``; returns (array, end offset)."""
    if len(buf) < offset + 7:
        raise FormatError(f"truncated header at offset {offset}: need 7 bytes, have {len(buf) - offset}")
    if buf[offset : offset + 4] != MAGIC:
        raise FormatError(f"bad magic at offset {offset}: {bytes(buf[offset:offset + 4])!r}")
    version, code, ndim = buf[offset + 4], buf[offset + 5], buf[offset + 6]
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset {offset + 4}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code} at offset {offset + 5}")
    pos = offset + 7
    if len(buf) < pos + 4 * ndim:
        raise FormatError(f"truncated dims at offset {pos}: need {4 * ndim} bytes, have {len(buf) - pos}")
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    if any(d == 0 for d in shape):
        raise FormatError(f"zero-length dimension in shape {shape} at offset {pos}")
    pos += 4 * ndim
    dtype = DTYPES[code]
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise FormatError(f"truncated payload at offset {pos}: need {nbytes} bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=dtype, count=int(np.prod(shape)), offset=pos).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def write_tensor(arr: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes after offset {end}")
    return arr


# samples


@dataclass
class SequenceSample:
    bbox: np.ndarray
    label: int
    pose: np.ndarray | None = None
    local: np.ndarray | None = None
    semantic: np.ndarray | None = None
    flow: np.ndarray | None = None
    source_id: str = ""
    tte: int = 0

    @property
    def n_frames(self) -> int:
        return int(self.bbox.shape[0])

    def modalities(self) -> set[str]:
        return {k for k in ("pose", "local", "semantic", "flow") if getattr(self, k) is not None}

    def validate(self) -> "SequenceSample":
        n = self.n_frames
        where = self.source_id or "sample"

        def need(cond, msg):
            if not cond:
                raise SampleError(f"{where}: {msg}")

        need(self.label in (0, 1), f"label must be 0 or 1, got {self.label!r}")
        need(self.bbox.ndim == 2 and self.bbox.shape[1] == 3 and n >= 1, f"bbox must be N x 3, got {self.bbox.shape}")
        arrays = {"bbox": self.bbox}
        if self.pose is not None:
            need(self.pose.shape == (n, 36), f"pose must be {n} x 36, got {self.pose.shape}")
            arrays["pose"] = self.pose
        for name, chans in (("local", 3), ("semantic", N_CLASSES), ("flow", 2)):
            arr = getattr(self, name)
            if arr is None:
                continue
            need(arr.ndim == 4 and arr.shape[0] == chans and arr.shape[1] == n,
                 f"{name} must be {chans} x {n} x H x W, got {arr.shape}")
            arrays[name] = arr
        for name, arr in arrays.items():
            need(np.isfinite(arr).all(), f"{name} has non-finite values")
        for name in ("bbox", "pose", "local"):
            if name in arrays:
                arr = arrays[name]
                need(arr.min() >= 0 and arr.max() <= 1, f"{name} values outside [0, 1]")
        if self.semantic is not None:
            need(np.isin(self.semantic, (0, 1)).all(), "semantic masks must be binary")
        return self

    def copy(self) -> "SequenceSample":
        return replace(self, **{k: None if getattr(self, k) is None else getattr(self, k).copy()
                                for k in ("bbox", "pose", "local", "semantic", "flow")})


_FILES = ("local", "semantic", "flow", "bbox", "pose")


def write_sample(sample: SequenceSample, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name in _FILES:
        arr = getattr(sample, name)
        if arr is not None:
            write_tensor(np.asarray(arr, dtype=np.float32), path / f"{name}.tnsr")
    meta = {"label": int(sample.label), "n_frames": sample.n_frames, "source_id": sample.source_id, "tte": int(sample.tte)}
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_sample(path) -> SequenceSample:
    """Read and validate a sample directory; raises before returning anything partial."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise LoadError(f"missing sample metadata: {meta_path}")
    if not (path / "bbox.tnsr").is_file():
        raise LoadError(f"missing bbox tensor: {path / 'bbox.tnsr'}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: {exc}") from exc
    arrays = {}
    for name in _FILES:
        f = path / f"{name}.tnsr"
        if f.is_file():
            try:
                arrays[name] = read_tensor(f)
            except FormatError as exc:
                raise FormatError(f"{f}: {exc}") from exc
    sample = SequenceSample(label=meta.get("label"), source_id=meta.get("source_id", ""), tte=meta.get("tte", 0), **arrays)
    if meta.get("n_frames") != sample.n_frames:
        raise FormatError(f"{meta_path}: n_frames {meta.get('n_frames')} but bbox has {sample.n_frames} rows")
    return sample.validate()


# manifest


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int
    split: str
    tte: int = 0


@dataclass
class DatasetManifest:
    records: list[ManifestRecord] = field(default_factory=list)
    frame_w: int = FRAME_W
    frame_h: int = FRAME_H
    root: Path | None = None

    def validate(self) -> "DatasetManifest":
        paths = [r.path for r in self.records]
        if len(set(paths)) != len(paths):
            raise FormatError("manifest has duplicate sample paths")
        for r in self.records:
            if r.split not in ("train", "test"):
                raise FormatError(f"record {r.path}: split must be train or test, got {r.split!r}")
            if r.label not in (0, 1):
                raise FormatError(f"record {r.path}: label must be 0 or 1, got {r.label!r}")
        return self

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def write(self, root) -> Path:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps({"label": r.label, "path": r.path, "split": r.split, "tte": r.tte}, sort_keys=True)
                 for r in self.records]
        out = root / "manifest.jsonl"
        out.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return out

    @classmethod
    def read(cls, root, frame_w=FRAME_W, frame_h=FRAME_H) -> "DatasetManifest":
        root = Path(root)
        f = root / "manifest.jsonl"
        if not f.is_file():
            raise LoadError(f"no manifest at {f}")
        info = root / "dataset.json"
        if info.is_file():
            geom = json.loads(info.read_text()).get("frame", {})
            frame_w, frame_h = geom.get("w", frame_w), geom.get("h", frame_h)
        records = []
        for n, line in enumerate(f.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                records.append(ManifestRecord(d["path"], d["label"], d["split"], d.get("tte", 0)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{f}:{n}: bad record ({exc})") from exc
        return cls(records, frame_w, frame_h, root).validate()

    def load(self, split: str | None = None) -> list[SequenceSample]:
        recs = self.records if split is None else self.split(split)
        missing = [str(self.root / r.path) for r in recs if not (self.root / r.path / "meta.json").is_file()]
        if missing:
            raise LoadError(f"manifest references {len(missing)} missing sample(s): {', '.join(missing)}")
        out = []
        for r in recs:
            s = load_sample(self.root / r.path)
            if s.label != r.label:
                raise FormatError(f"{r.path}: manifest label {r.label} disagrees with sample label {s.label}")
            out.append(s)
        return out


# normalisation


def minmax_scale(x: float, lo: float, hi: float) -> float:
    """(x - lo) / (hi - lo); out-of-range inputs are clamped with a warning."""
    if not hi > lo:
        raise ValueError(f"minmax_scale needs hi > lo, got lo={lo}, hi={hi}")
    if x < lo or x > hi:
        log.warning("value %s outside [%s, %s]; clamping", x, lo, hi)
        x = min(max(x, lo), hi)
    return (x - lo) / (hi - lo)


def encode_bbox(corners, frame_w=FRAME_W, frame_h=FRAME_H) -> tuple[float, float, float]:
    """(x1, y1, x2, y2) pixels -> normalised (x_centre, y_centre, height); width is dropped."""
    x1, y1, x2, y2 = (float(c) for c in corners)
    if not (x2 > x1 and y2 > y1):
        raise SampleError(f"degenerate box {corners}")
    return (
        minmax_scale((x1 + x2) / 2, 0, frame_w),
        minmax_scale((y1 + y2) / 2, 0, frame_h),
        minmax_scale(y2 - y1, 0, frame_h),
    )


def decode_bbox(xyh, frame_w=FRAME_W, frame_h=FRAME_H) -> tuple[float, float, float]:
    """Inverse of :func:`encode_bbox` up to the dropped width: pixel (cx, cy, h)."""
    x, y, h = xyh
    return x * frame_w, y * frame_h, h * frame_h


def normalize_pose(points_px, frame_w=FRAME_W, frame_h=FRAME_H) -> np.ndarray:
    """18 x 2 pixel joints -> 36 normalised values; NaN joints become (0, 0) (missing)."""
    pts = np.asarray(points_px, dtype=np.float64).reshape(18, 2)
    missing = ~np.isfinite(pts).all(axis=1)
    out = np.column_stack([np.clip(pts[:, 0] / frame_w, 0, 1), np.clip(pts[:, 1] / frame_h, 0, 1)])
    out[missing] = 0
    return snap_unit(out.reshape(36))


# observation windows


def extract_window(track, tte: int, n: int = 16, rng=None, horizon=(60, 30)):
    """Pick the frame range [t_end - n + 1, t_end] observed before the event.

    ``track`` is the (first, last) annotated frame.  t_end is drawn uniformly
    from [tte - 60, tte - 30] clipped to the track; returns None when the
    track cannot supply ``n`` frames ending there.
    """
    first, last = int(track[0]), int(track[1])
    lo, hi = max(tte - horizon[0], first), min(tte - horizon[1], last)
    if hi < lo:
        return None
    t_end = int(rng.integers(lo, hi + 1))
    start = t_end - n + 1
    if start < first:
        return None
    return range(start, t_end + 1)


def extract_windows(tracks, n=16, rng=None):
    """Windows for many (track, tte) pairs; returns (windows, skipped count)."""
    out, skipped = [], 0
    for track, tte in tracks:
        w = extract_window(track, tte, n, rng)
        if w is None:
            skipped += 1
        else:
            out.append(w)
    if skipped:
        log.info("skipped %d of %d tracks shorter than %d frames in the window", skipped, len(tracks), n)
    return out, skipped


# resizing of precomputed fields


def _zoom_factors(shape, size):
    return (1, 1, size[0] / shape[2], size[1] / shape[3])


def resize_masks(masks: np.ndarray, size) -> np.ndarray:
    """Nearest-neighbour resize of C x N x H x W binary masks."""
    return ndimage.zoom(masks, _zoom_factors(masks.shape, size), order=0, grid_mode=True, mode="nearest")


def resize_rgb(rgb: np.ndarray, size) -> np.ndarray:
    return np.clip(ndimage.zoom(rgb, _zoom_factors(rgb.shape, size), order=1, grid_mode=True, mode="nearest"), 0, 1)


def resize_flow(flow: np.ndarray, size) -> np.ndarray:
    """Bilinear resize of 2 x N x H x W flow; vectors rescaled to the new pixel units."""
    out = ndimage.zoom(flow, _zoom_factors(flow.shape, size), order=1, grid_mode=True, mode="nearest")
    out[0] *= size[1] / flow.shape[3]
    out[1] *= size[0] / flow.shape[2]
    return out


# augmentation


def _mirror(x):
    return (1.0 - x.astype(np.float64)).astype(np.float32)


def hflip(sample: SequenceSample) -> SequenceSample:
    """Mirror every modality left-right (an exact involution)."""
    s = sample.copy()
    if s.local is not None:
        s.local = np.ascontiguousarray(s.local[..., ::-1])
    if s.semantic is not None:
        s.semantic = np.ascontiguousarray(s.semantic[..., ::-1])
    if s.flow is not None:
        f = np.ascontiguousarray(s.flow[..., ::-1])
        f[0] = -f[0]
        s.flow = f
    s.bbox[:, 0] = _mirror(s.bbox[:, 0])
    if s.pose is not None:
        pts = s.pose.reshape(-1, 18, 2)
        present = (pts != 0).any(axis=2)
        x = np.where(present, _mirror(pts[..., 0]), pts[..., 0])
        pts = np.stack([x, pts[..., 1]], axis=-1)[:, FLIP_PERMUTATION]
        s.pose = np.ascontiguousarray(pts.reshape(-1, 36), dtype=np.float32)
    return s


def rotate_points(xy: np.ndarray, theta: float, frame_w=FRAME_W, frame_h=FRAME_H) -> np.ndarray:
    """Rotate normalised (x, y) points by ``theta`` radians about the frame centre, in pixel metric."""
    xy = np.asarray(xy, dtype=np.float64)
    px = (xy[..., 0] - 0.5) * frame_w
    py = (xy[..., 1] - 0.5) * frame_h
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([(c * px - s * py) / frame_w + 0.5, (s * px + c * py) / frame_h + 0.5], axis=-1)


def _rotate_field(arr: np.ndarray, theta: float, order: int, aspect: float) -> np.ndarray:
    """Rotate each C x H x W slice of a C x N x H x W field about its centre.

    ``aspect`` is the physical width/height of the field; the rotation is a
    true rotation in that metric, matching :func:`rotate_points`.
    """
    _, _, h, w = arr.shape
    rows, cols = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    # output pixel -> physical coords -> inverse rotation -> source pixel
    px = (cols / w - 0.5) * aspect
    py = rows / h - 0.5
    c, s = np.cos(-theta), np.sin(-theta)
    sx = (c * px - s * py) / aspect + 0.5
    sy = s * px + c * py + 0.5
    coords = np.stack([sy * h - 0.5, sx * w - 0.5])
    out = np.empty_like(arr)
    for ch in range(arr.shape[0]):
        for t in range(arr.shape[1]):
            out[ch, t] = ndimage.map_coordinates(arr[ch, t], coords, order=order, mode="nearest")
    return out


def rotate(sample: SequenceSample, theta: float, frame_w=FRAME_W, frame_h=FRAME_H) -> SequenceSample:
    """Roll every modality by ``theta`` radians (image y axis pointing down)."""
    s = sample.copy()
    aspect = frame_w / frame_h
    if s.local is not None:
        s.local = np.clip(_rotate_field(s.local, theta, 1, 1.0), 0, 1)
    if s.semantic is not None:
        s.semantic = _rotate_field(s.semantic, theta, 0, aspect)
    if s.flow is not None:
        f = _rotate_field(s.flow, theta, 1, aspect)
        _, _, gh, gw = f.shape
        # grid pixels -> frame metric, rotate, back
        u, v = f[0] * (frame_w / gw), f[1] * (frame_h / gh)
        c, sn = np.cos(theta), np.sin(theta)
        f[0] = (c * u - sn * v) * (gw / frame_w)
        f[1] = (sn * u + c * v) * (gh / frame_h)
        s.flow = f
    centre = rotate_points(s.bbox[:, :2], theta, frame_w, frame_h)
    h_px = s.bbox[:, 2].astype(np.float64) * frame_h
    w_px = BOX_ASPECT * h_px
    h_new = (np.abs(np.cos(theta)) * h_px + np.abs(np.sin(theta)) * w_px) / frame_h
    s.bbox = snap_unit(np.clip(np.column_stack([centre, h_new]), 0, 1))
    if s.pose is not None:
        pts = s.pose.reshape(-1, 18, 2)
        present = (pts != 0).any(axis=2, keepdims=True)
        rot = np.clip(rotate_points(pts, theta, frame_w, frame_h), 0, 1)
        s.pose = snap_unit(np.where(present, rot, 0).reshape(-1, 36))
    return s


def color_jitter(sample: SequenceSample, brightness: float, contrast: float) -> SequenceSample:
    """Scale contrast about the clip mean, then brightness; touches only the local crop."""
    s = sample.copy()
    if s.local is not None:
        x = s.local.astype(np.float64)
        mu = x.mean()
        s.local = np.clip(((x - mu) * contrast + mu) * brightness, 0, 1).astype(np.float32)
    return s


def augment(sample: SequenceSample, rng: np.random.Generator, p: float = 0.5, max_roll_deg: float = 10.0,
            jitter=(0.8, 1.2), frame_w=FRAME_W, frame_h=FRAME_H) -> SequenceSample:
    """Random flip / roll / colour jitter, each drawn once and applied to all frames.

    The same five numbers are drawn from ``rng`` whatever ``p`` is, so the
    stream position does not depend on which augmentations fire.
    """
    do_flip, do_roll, do_jit = rng.random(3) < p
    theta = np.deg2rad(rng.uniform(-max_roll_deg, max_roll_deg))
    b, c = rng.uniform(jitter[0], jitter[1], size=2)
    out = sample
    if do_flip:
        out = hflip(out)
    if do_roll:
        out = rotate(out, theta, frame_w, frame_h)
    if do_jit:
        out = color_jitter(out, b, c)
    return out
