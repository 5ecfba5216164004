"""Backbone and training configuration, with canonical ``key=value`` text."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from cdgc.errors import ConfigError

SPATIAL_OPS = ("vanilla", "cdgc_matrix", "accelerated_cdgc")
TEMPORAL_OPS = ("shift", "conv9")
ALPHA_MODES = ("fixed", "learnable")

FULL_WIDTHS = (64, 128, 256)
FULL_REPEATS = (4, 3, 3)
DESK_WIDTHS = (16, 32, 64)
TOY_WIDTHS = (16, 32)
TOY_REPEATS = (1, 2)

# milestones of the 140-epoch reference schedule
REFERENCE_EPOCHS = 140
REFERENCE_DECAY = (60, 80, 100)


def default_temporal_op(spatial_op: str) -> str:
    """Shift-based blocks pair with the temporal shift; graph-matrix blocks with a 9-tap conv."""
    return "shift" if spatial_op == "accelerated_cdgc" else "conv9"


@dataclass(frozen=True)
class BasicBlockConfig:
    in_channels: int
    out_channels: int
    spatial_op: str = "accelerated_cdgc"
    temporal_stride: int = 1
    residual: bool = True
    temporal_op: str | None = None

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channels must be positive, got {self.in_channels}->{self.out_channels}")
        if self.spatial_op not in SPATIAL_OPS:
            raise ConfigError(f"unknown spatial_op {self.spatial_op!r}", "spatial_op")
        if self.temporal_stride < 1:
            raise ConfigError(f"temporal_stride must be > 0, got {self.temporal_stride}", "temporal_stride")
        if self.temporal_op is None:
            object.__setattr__(self, "temporal_op", default_temporal_op(self.spatial_op))
        if self.temporal_op not in TEMPORAL_OPS:
            raise ConfigError(f"unknown temporal_op {self.temporal_op!r}", "temporal_op")

    @property
    def needs_projection(self) -> bool:
        return self.residual and (self.in_channels != self.out_channels or self.temporal_stride != 1)

    def to_text(self) -> str:
        return ",".join(str(v) for v in (self.in_channels, self.out_channels, self.spatial_op,
                                         self.temporal_op, self.temporal_stride, int(self.residual)))

    @classmethod
    def from_text(cls, text: str) -> "BasicBlockConfig":
        parts = text.split(",")
        if len(parts) != 6:
            raise ConfigError(f"block needs 6 comma-separated fields, got {text!r}", "block")
        try:
            cin, cout, stride, res = int(parts[0]), int(parts[1]), int(parts[4]), int(parts[5])
        except ValueError:
            raise ConfigError(f"bad integer in block {text!r}", "block") from None
        return cls(cin, cout, parts[2], stride, bool(res), parts[3])


def schedule(widths, repeats, in_channels: int = 3, spatial_op: str = "accelerated_cdgc",
             temporal_op: str | None = None) -> tuple[BasicBlockConfig, ...]:
    """Blocks for a width schedule; stride 2 at every width change, no residual on the first block."""
    if len(widths) != len(repeats) or not widths:
        raise ConfigError("widths and repeats must be non-empty and equally long", "widths")
    blocks = []
    prev = in_channels
    for stage, (w, r) in enumerate(zip(widths, repeats)):
        if r < 1:
            raise ConfigError(f"repeat count must be positive, got {r}", "repeats")
        for i in range(r):
            stride = 2 if stage > 0 and i == 0 else 1
            blocks.append(BasicBlockConfig(prev, w, spatial_op, stride, residual=bool(blocks),
                                           temporal_op=temporal_op))
            prev = w
    return tuple(blocks)


@dataclass(frozen=True)
class BackboneConfig:
    blocks: tuple[BasicBlockConfig, ...]
    num_classes: int = 60
    in_channels: int = 3
    alpha: float = 0.3
    alpha_mode: str = "fixed"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}", "num_classes")
        if not self.blocks:
            raise ConfigError("backbone needs at least one block", "blocks")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"alpha_mode must be one of {ALPHA_MODES}", "alpha_mode")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}", "alpha")
        prev = self.in_channels
        for i, b in enumerate(self.blocks):
            if b.in_channels != prev:
                raise ConfigError(f"block {i} expects {b.in_channels} input channels but receives {prev}", "blocks")
            prev = b.out_channels

    @property
    def spatial_op(self) -> str:
        ops = {b.spatial_op for b in self.blocks}
        return ops.pop() if len(ops) == 1 else "mixed"

    @classmethod
    def from_schedule(cls, widths=FULL_WIDTHS, repeats=FULL_REPEATS, *,
                      spatial_op: str = "accelerated_cdgc", num_classes: int = 60,
                      in_channels: int = 3, alpha: float = 0.3, alpha_mode: str = "fixed",
                      temporal_op: str | None = None) -> "BackboneConfig":
        blocks = schedule(widths, repeats, in_channels, spatial_op, temporal_op)
        return cls(blocks, num_classes, in_channels, alpha, alpha_mode)

    @classmethod
    def full(cls, spatial_op: str = "accelerated_cdgc", num_classes: int = 60, **kw) -> "BackboneConfig":
        """One input block plus nine basic blocks, widths 64x4, 128x3, 256x3."""
        return cls.from_schedule(FULL_WIDTHS, FULL_REPEATS, spatial_op=spatial_op,
                                 num_classes=num_classes, **kw)

    @classmethod
    def desk(cls, spatial_op: str = "accelerated_cdgc", num_classes: int = 8, **kw) -> "BackboneConfig":
        """The full block layout at a quarter of the width."""
        return cls.from_schedule(DESK_WIDTHS, FULL_REPEATS, spatial_op=spatial_op,
                                 num_classes=num_classes, **kw)

    @classmethod
    def toy(cls, spatial_op: str = "accelerated_cdgc", num_classes: int = 8, **kw) -> "BackboneConfig":
        """Three blocks (16, 32/2, 32) for quick experiments."""
        return cls.from_schedule(TOY_WIDTHS, TOY_REPEATS, spatial_op=spatial_op,
                                 num_classes=num_classes, **kw)

    def with_spatial_op(self, spatial_op: str, temporal_op: str | None = None) -> "BackboneConfig":
        blocks = tuple(replace(b, spatial_op=spatial_op, temporal_op=temporal_op) for b in self.blocks)
        return replace(self, blocks=blocks)

    def to_text(self) -> str:
        lines = [
            f"num_classes={self.num_classes}",
            f"in_channels={self.in_channels}",
            f"alpha={self.alpha!r}",
            f"alpha_mode={self.alpha_mode}",
        ]
        lines += [f"block={b.to_text()}" for b in self.blocks]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BackboneConfig":
        kv: dict[str, str] = {}
        blocks = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigError(f"expected key=value, got {line!r}", line)
            if key == "block":
                blocks.append(BasicBlockConfig.from_text(val))
            elif key in ("num_classes", "in_channels", "alpha", "alpha_mode"):
                kv[key] = val
            else:
                raise ConfigError(f"unknown backbone key {key!r}", key)
        try:
            return cls(tuple(blocks), int(kv.get("num_classes", 60)), int(kv.get("in_channels", 3)),
                       float(kv.get("alpha", 0.3)), kv.get("alpha_mode", "fixed"))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


def scaled_decay_epochs(epochs: int, reference=REFERENCE_DECAY, reference_epochs: int = REFERENCE_EPOCHS):
    """Milestones of the reference schedule scaled to ``epochs``, rounded up, deduplicated."""
    out = []
    for m in reference:
        e = max(1, -(-m * epochs // reference_epochs))
        if e <= epochs and (not out or e > out[-1]):
            out.append(e)
    return tuple(out)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    epochs: int = 30
    decay_epochs: tuple[int, ...] | None = None
    decay_factor: float = 0.1
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}", "epochs")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}", "batch_size")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}", "learning_rate")
        if self.decay_epochs is None:
            object.__setattr__(self, "decay_epochs", scaled_decay_epochs(self.epochs))
        d = tuple(int(e) for e in self.decay_epochs)
        object.__setattr__(self, "decay_epochs", d)
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigError(f"decay_epochs must be strictly increasing, got {d}", "decay_epochs")
        if d and (d[0] < 1 or d[-1] > self.epochs):
            raise ConfigError(f"decay_epochs must lie in [1, {self.epochs}], got {d}", "decay_epochs")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: decayed once per milestone reached."""
        k = sum(1 for m in self.decay_epochs if epoch >= m)
        return self.learning_rate * self.decay_factor ** k if k else self.learning_rate


def config_keys(cls) -> list[str]:
    return [f.name for f in fields(cls)]

