"""Run configuration: flat ``key=value`` files overridden by command-line flags."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .fusion import DESK, FULL, ConfigurationError, VariantSpec
from .optim import DESK_LR, FULL_LR


@dataclass(frozen=True)
class RunConfig:
    variant: str = "BLGPM"
    lr: float = DESK_LR
    epochs: int = 40
    batch: int = 2
    seed: int = 0
    seeds: int = 1
    n_frames: int = DESK.n_frames
    local_size: int = DESK.local_size
    global_size: int = DESK.global_size
    dropout: float = 0.5
    fc_decay: float = 1e-4
    augment: bool = False
    threshold: float = 0.5
    noise: float = 0.1
    n: int = 500
    data: str = ""
    out: str = ""

    def validate(self) -> "RunConfig":
        VariantSpec.from_name(self.variant)
        checks = [
            (self.lr >= 0, "lr must be >= 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch >= 1, "batch must be >= 1"),
            (self.seeds >= 1, "seeds must be >= 1"),
            (self.n_frames >= 1 and self.local_size >= 1 and self.global_size >= 1, "dims must be positive"),
            (0 <= self.dropout < 1, "dropout must be in [0, 1)"),
            (self.fc_decay >= 0, "fc_decay must be >= 0"),
            (0 <= self.noise <= 1, "noise must be in [0, 1]"),
            (self.n >= 0, "n must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)
        return self

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    def with_updates(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def desk(self) -> "RunConfig":
        return replace(self, n_frames=DESK.n_frames, local_size=DESK.local_size, global_size=DESK.global_size)

    def full(self) -> "RunConfig":
        return replace(self, n_frames=FULL.n_frames, local_size=FULL.local_size, global_size=FULL.global_size,
                       lr=FULL_LR, epochs=40, batch=2)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(name, raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from exc


_TYPES = {"variant": str, "data": str, "out": str, "augment": bool}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    known = {f.name: _TYPES.get(f.name, type(getattr(base, f.name))) for f in fields(RunConfig)}
    updates = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"line {n}: unknown key {key!r}")
        updates[key] = _parse(key, value, known[key])
    return replace(base, **updates)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
