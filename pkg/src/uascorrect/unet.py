"""Encoder-decoder correction network for 5-band patches, plus its weights file."""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import nn
from .autodiff import Tensor
from .errors import ConfigError, FormatError, ShapeError

WEIGHTS_MAGIC = b"UNW1"
ACTIVATIONS = {"sigmoid": 0}


@dataclass(frozen=True)
class UNetConfig:
    input_channels: int = 5
    input_size: int = 128
    depth: int = 4
    base_channels: int = 16
    final_convs: int = 3
    output_activation: str = "sigmoid"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.input_channels < 1:
            raise ConfigError(f"input_channels must be >= 1, got {self.input_channels}")
        if self.final_convs < 1:
            raise ConfigError(f"final_convs must be >= 1, got {self.final_convs}")
        if self.input_size < 1 or self.input_size % (2**self.depth):
            raise ConfigError(
                f"input_size {self.input_size} is not divisible by 2**depth = {2**self.depth}"
            )
        if self.output_activation not in ACTIVATIONS:
            raise ConfigError(f"unsupported output activation {self.output_activation!r}")
        if not 0 <= self.seed < 2**32:
            raise ConfigError("seed must fit in an unsigned 32-bit integer")

    @classmethod
    def tiny(cls, **overrides) -> "UNetConfig":
        """Desk-scale preset used by the cross-validation harness."""
        params = dict(depth=2, base_channels=4)
        params.update(overrides)
        return cls(**params)

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level


def parameter_count(config: UNetConfig) -> int:
    """Closed-form number of trainable scalars for ``config``."""

    def conv(cin: int, cout: int) -> int:
        return 9 * cin * cout + cout

    c = config.channels
    total = 0
    cin = config.input_channels
    for level in range(config.depth):
        total += conv(cin, c(level)) + conv(c(level), c(level))
        cin = c(level)
    total += conv(cin, c(config.depth)) + conv(c(config.depth), c(config.depth))
    for level in reversed(range(config.depth)):
        up_in = c(level + 1)
        total += 4 * up_in * (up_in // 2) + up_in // 2
        total += conv(2 * c(level), c(level)) + conv(c(level), c(level))
    for _ in range(config.final_convs - 1):
        total += conv(c(0), c(0))
    total += conv(c(0), config.input_channels)
    return total


class UNetModel:
    """Encoder blocks (2 convs + pool), bottleneck (2 convs), decoder blocks
    (up-conv + skip concat + 2 convs), and a convolutional head ending in a sigmoid."""

    def __init__(self, config: UNetConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config.channels
        self.encoder: list[tuple[nn.ConvSpec, nn.ConvSpec]] = []
        cin = config.input_channels
        for level in range(config.depth):
            self.encoder.append(
                (nn.ConvSpec.create(cin, c(level), rng), nn.ConvSpec.create(c(level), c(level), rng))
            )
            cin = c(level)
        bottom = c(config.depth)
        self.bottleneck = (nn.ConvSpec.create(cin, bottom, rng), nn.ConvSpec.create(bottom, bottom, rng))
        # decoder[i] restores level i; stored from deepest to shallowest
        self.decoder: list[tuple[nn.TransposeConvSpec, nn.ConvSpec, nn.ConvSpec]] = []
        for level in reversed(range(config.depth)):
            self.decoder.append((
                nn.TransposeConvSpec.create(c(level + 1), rng),
                nn.ConvSpec.create(2 * c(level), c(level), rng),
                nn.ConvSpec.create(c(level), c(level), rng),
            ))
        self.head: list[nn.ConvSpec] = [
            nn.ConvSpec.create(c(0), c(0), rng) for _ in range(config.final_convs - 1)
        ]
        self.head.append(nn.ConvSpec.create(c(0), config.input_channels, rng))

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}

        def register(prefix: str, layer) -> None:
            for key, tensor in layer.parameters().items():
                params[f"{prefix}.{key}"] = tensor

        for level, (a, b) in enumerate(self.encoder):
            register(f"enc{level}.conv0", a)
            register(f"enc{level}.conv1", b)
        register("bottleneck.conv0", self.bottleneck[0])
        register("bottleneck.conv1", self.bottleneck[1])
        for i, (up, a, b) in enumerate(self.decoder):
            level = self.config.depth - 1 - i
            register(f"dec{level}.up", up)
            register(f"dec{level}.conv0", a)
            register(f"dec{level}.conv1", b)
        for i, conv in enumerate(self.head):
            register(f"head.conv{i}", conv)
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, batch: Tensor | np.ndarray, trace: list | None = None) -> Tensor:
        """Map [N, C, S, S] to [N, C, S, S] in (0, 1).

        If ``trace`` is given, (stage name, spatial size) pairs are appended to it.
        """
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
        cfg = self.config
        expected = (cfg.input_channels, cfg.input_size, cfg.input_size)
        if x.data.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"model expects [N, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")
        skips = []
        for level, (a, b) in enumerate(self.encoder):
            x = nn.relu(nn.conv2d(x, a))
            x = nn.relu(nn.conv2d(x, b))
            skips.append(x)
            x = nn.max_pool2d(x)
            if trace is not None:
                trace.append((f"enc{level}", skips[-1].shape[-1]))
        x = nn.relu(nn.conv2d(x, self.bottleneck[0]))
        x = nn.relu(nn.conv2d(x, self.bottleneck[1]))
        if trace is not None:
            trace.append(("bottleneck", x.shape[-1]))
        for i, (up, a, b) in enumerate(self.decoder):
            level = cfg.depth - 1 - i
            x = nn.transpose_conv2d(x, up)
            x = nn.concat_channels(skips[level], x)
            x = nn.relu(nn.conv2d(x, a))
            x = nn.relu(nn.conv2d(x, b))
            if trace is not None:
                trace.append((f"dec{level}", x.shape[-1]))
        for conv in self.head[:-1]:
            x = nn.relu(nn.conv2d(x, conv))
        return nn.activation(cfg.output_activation, nn.conv2d(x, self.head[-1]))

    __call__ = forward


def build_unet(config: UNetConfig) -> UNetModel:
    return UNetModel(config)


def forward(model: UNetModel, batch) -> Tensor:
    return model.forward(batch)


_CONFIG_FIELDS = [f.name for f in fields(UNetConfig)]


def _config_to_u32(config: UNetConfig) -> list[int]:
    values = asdict(config)
    values["output_activation"] = ACTIVATIONS[config.output_activation]
    return [int(values[name]) for name in _CONFIG_FIELDS]


def save_weights(model: UNetModel, path: str | Path) -> None:
    chunks = [WEIGHTS_MAGIC, struct.pack(f"<{len(_CONFIG_FIELDS)}I", *_config_to_u32(model.config))]
    for name, tensor in model.named_parameters().items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{tensor.data.ndim}I", tensor.data.ndim, *tensor.shape))
        chunks.append(tensor.data.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated weights file at byte {self.pos}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    @property
    def done(self) -> bool:
        return self.pos == len(self.blob)


def load_weights(path: str | Path, expected: UNetConfig | None = None) -> UNetModel:
    """Read a weights file. If ``expected`` is given, any config field mismatch is a ConfigError."""
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(4) != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: not a UNW1 weights file")
    raw = dict(zip(_CONFIG_FIELDS, reader.u32(len(_CONFIG_FIELDS))))
    codes = {v: k for k, v in ACTIVATIONS.items()}
    if raw["output_activation"] not in codes:
        raise FormatError(f"{path}: unknown activation code {raw['output_activation']}")
    raw["output_activation"] = codes[raw["output_activation"]]
    try:
        config = UNetConfig(**raw)
    except ConfigError as exc:
        raise FormatError(f"{path}: stored config is invalid: {exc}") from exc
    if expected is not None:
        diffs = [
            f"{name}: file has {getattr(config, name)}, expected {getattr(expected, name)}"
            for name in _CONFIG_FIELDS
            if name not in ("seed",) and getattr(config, name) != getattr(expected, name)
        ]
        if diffs:
            raise ConfigError("weights config mismatch: " + "; ".join(diffs))
    model = UNetModel(config)
    params = model.named_parameters()
    seen = set()
    while not reader.done:
        (name_len,) = reader.u32()
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.u32()
        shape = reader.u32(rank)
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
        if name not in params:
            raise FormatError(f"{path}: unexpected parameter {name!r}")
        if params[name].shape != tuple(shape):
            raise FormatError(f"{path}: {name} has shape {tuple(shape)}, model needs {params[name].shape}")
        params[name].data[...] = data
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise FormatError(f"{path}: missing parameters {sorted(missing)}")
    return model
