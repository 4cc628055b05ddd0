"""Binary model snapshots.

Layout (all integers little-endian):

    "CNCP"                       4-byte magic
    u32 version                  currently 1
    u32 config length, UTF-8     key=value lines describing the model + run
    u32 parameter entries
    per entry:
        u16 name length, UTF-8 name
        u8 rank, rank x u64 extents
        raw float32 values, row-major
    optional optimizer trailer:
        u8 flag (1), u64 step counter,
        per entry: raw float32 first moments, then second moments

Values are stored as 32-bit floats, which is exactly what training mode
uses, so a save/load round trip is bit-identical.
"""

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .architectures import ConvBlockSpec, Model, ModelConfig, build
from .errors import ContractError, FormatError
from .tensor import Prng

MAGIC = b"CNCP"
VERSION = 1


def _config_text(config: ModelConfig, seed: int, epoch: int) -> str:
    lines = [
        f"architecture={config.architecture}",
        f"input_channels={config.input_channels}",
        "conv_kernels=" + ";".join(
            ",".join(str(k) for k in blk.kernel_lengths) for blk in config.conv_blocks),
        "conv_filters=" + ";".join(str(blk.filters_per_kernel) for blk in config.conv_blocks),
        "conv_strides=" + ";".join(str(blk.stride) for blk in config.conv_blocks),
        "gru_widths=" + ",".join(str(w) for w in config.gru_widths),
        f"num_classes={config.num_classes}",
        f"precision={config.precision}",
        f"seed={seed}",
        f"epoch={epoch}",
    ]
    return "\n".join(lines) + "\n"


def _parse_config_text(text: str, offset: int) -> tuple[ModelConfig, int, int]:
    fields = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"malformed config line {line!r}", offset=offset)
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    required = {"architecture", "input_channels", "conv_kernels", "conv_filters",
                "conv_strides", "gru_widths", "num_classes", "precision",
                "seed", "epoch"}
    missing = required - fields.keys()
    if missing:
        raise FormatError(f"config text missing keys {sorted(missing)}", offset=offset)
    unknown = fields.keys() - required
    if unknown:
        raise FormatError(f"config text has unknown keys {sorted(unknown)}", offset=offset)
    try:
        kernel_groups = [
            tuple(int(k) for k in group.split(","))
            for group in fields["conv_kernels"].split(";")
        ]
        filters = [int(v) for v in fields["conv_filters"].split(";")]
        strides = [int(v) for v in fields["conv_strides"].split(";")]
        widths = [int(v) for v in fields["gru_widths"].split(",")]
        config = ModelConfig(
            architecture=fields["architecture"],
            input_channels=int(fields["input_channels"]),
            conv_blocks=[ConvBlockSpec(k, f, s)
                         for k, f, s in zip(kernel_groups, filters, strides, strict=True)],
            gru_widths=widths,
            num_classes=int(fields["num_classes"]),
            precision=fields["precision"],
        )
        seed = int(fields["seed"])
        epoch = int(fields["epoch"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"config text: {exc}", offset=offset) from None
    return config, seed, epoch


@dataclass
class Checkpoint:
    config: ModelConfig
    params: list[tuple[str, np.ndarray]]
    seed: int = 0
    epoch: int = 0
    opt_t: int | None = None
    opt_m: dict | None = None
    opt_v: dict | None = None

    @classmethod
    def from_model(cls, model: Model, seed: int = 0, epoch: int = 0,
                   opt_t=None, opt_m=None, opt_v=None) -> "Checkpoint":
        params = []
        for name, tensor in model.named_parameters():
            if tensor.data.dtype != np.float32:
                raise ContractError(
                    f"parameter {name} is {tensor.data.dtype}; only float32 models "
                    "can be checkpointed losslessly")
            params.append((name, tensor.data.copy()))
        return cls(model.config, params, seed, epoch, opt_t, opt_m, opt_v)

    def scalar_count(self) -> int:
        return sum(arr.size for _, arr in self.params)


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    text = _config_text(checkpoint.config, checkpoint.seed, checkpoint.epoch).encode()
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(checkpoint.params)))
    for name, arr in checkpoint.params:
        encoded = name.encode()
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        for extent in arr.shape:
            buf.write(struct.pack("<Q", extent))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if checkpoint.opt_t is not None:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<Q", checkpoint.opt_t))
        for name, arr in checkpoint.params:
            for table in (checkpoint.opt_m, checkpoint.opt_v):
                moment = table[name]
                if moment.shape != arr.shape:
                    raise ContractError(
                        f"optimizer moment for {name} has shape {moment.shape}, "
                        f"parameter is {arr.shape}")
                buf.write(np.ascontiguousarray(moment, dtype="<f4").tobytes())
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", offset=self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]

    @property
    def remaining(self) -> int:
        return len(self.buf) - self.pos


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    text_len = r.unpack("<I", "config length")
    config_offset = r.pos
    text = r.take(text_len, "config text").decode("utf-8", errors="replace")
    config, seed, epoch = _parse_config_text(text, config_offset)

    n_params = r.unpack("<I", "parameter count")
    params: list[tuple[str, np.ndarray]] = []
    for i in range(n_params):
        name_len = r.unpack("<H", f"name length of parameter {i}")
        name = r.take(name_len, f"name of parameter {i}").decode()
        rank = r.unpack("<B", f"rank of {name}")
        shape = tuple(r.unpack("<Q", f"extent of {name}") for _ in range(rank))
        count = 1
        for extent in shape:
            count *= extent
        raw = r.take(4 * count, f"values of {name}")
        params.append((name, np.frombuffer(raw, dtype="<f4").reshape(shape).copy()))

    opt_t = opt_m = opt_v = None
    if r.remaining:
        flag = r.unpack("<B", "optimizer flag")
        if flag != 1:
            raise FormatError(f"bad optimizer flag {flag}", offset=r.pos - 1)
        opt_t = r.unpack("<Q", "optimizer step counter")
        opt_m, opt_v = {}, {}
        for name, arr in params:
            for table in (opt_m, opt_v):
                raw = r.take(4 * arr.size, f"optimizer moments of {name}")
                table[name] = np.frombuffer(raw, dtype="<f4").reshape(arr.shape).copy()
        if r.remaining:
            raise FormatError(f"{r.remaining} trailing bytes", offset=r.pos)
    return Checkpoint(config, params, seed, epoch, opt_t, opt_m, opt_v)


def model_from_checkpoint(checkpoint: Checkpoint) -> Model:
    """Rebuild the model and overwrite its freshly drawn values in place."""
    model = build(checkpoint.config, Prng(checkpoint.seed))
    stored = dict(checkpoint.params)
    for name, tensor in model.named_parameters():
        if name not in stored:
            raise FormatError(f"checkpoint is missing parameter {name}")
        arr = stored.pop(name)
        if arr.shape != tensor.data.shape:
            raise FormatError(
                f"parameter {name} has shape {arr.shape}, model expects {tensor.data.shape}")
        tensor.data = arr.astype(tensor.data.dtype, copy=True)
    if stored:
        raise FormatError(f"checkpoint has unexpected parameters {sorted(stored)}")
    return model
