"""MSTC checkpoint files.

Layout (little endian):

    "MSTC" | u16 version | u32 len | config text (key=value lines, includes `epoch`)
    u32 n_params | n_params x (u16 len | name | u8 ndim | ndim x u32 | f32 data)
    per network in NETWORK_NAMES: u16 len | name | u64 t | per parameter of
    that network, in table order: f32 m data | f32 v data

Parameter names are `<network>.<dotted layer path>`, e.g. `g_ab.0.weight`.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from core.errors import BadMagic, CheckpointError, IoFailure, ShapeMismatch, VersionMismatch
from core.models.training import TrainingConfig
from core.nn import AdamState
from core.schema import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, NETWORK_NAMES
from core.utils.binary import ByteReader
from core.utils.files import atomic_write
from core.utils.keyvalue import parse_key_values

from .cyclegan import CycleGanModel, build_model

logger = logging.getLogger("mst_core.checkpoint")

_HEADER = struct.Struct("<4sHI")


def _name_bytes(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _parameter_table(model: CycleGanModel) -> dict[str, dict[str, np.ndarray]]:
    return {name: model.network(name).parameter_dict() for name in NETWORK_NAMES}


def encode_checkpoint(model: CycleGanModel, cfg: TrainingConfig, epoch: int) -> bytes:
    text = cfg.to_text(epoch=epoch).encode("utf-8")
    out = bytearray(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(text)))
    out += text
    table = _parameter_table(model)
    out += struct.pack("<I", sum(len(params) for params in table.values()))
    for net_name, params in table.items():
        for pname, p in params.items():
            out += _name_bytes(f"{net_name}.{pname}")
            out += struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape)
            out += _f32(p)
    for net_name, params in table.items():
        state = model.optimizers[net_name]
        state.ensure_slots(params)
        out += _name_bytes(net_name) + struct.pack("<Q", state.t)
        for pname in params:
            out += _f32(state.m[pname]) + _f32(state.v[pname])
    return bytes(out)


def save_checkpoint(model: CycleGanModel, cfg: TrainingConfig, path: str | Path, epoch: int) -> Path:
    target = Path(path)
    try:
        atomic_write(target, encode_checkpoint(model, cfg, epoch))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {target}: {exc}") from exc
    logger.info("checkpoint written", extra={"path": str(target), "epoch": epoch})
    return target


def _read_name(reader: ByteReader) -> str:
    (length,) = reader.unpack("<H")
    try:
        return reader.take(length, "name bytes").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("name is not UTF-8", offset=reader.pos) from exc


def _read_f32(reader: ByteReader, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape, dtype=np.int64))
    raw = reader.take(4 * count, "f32 data")
    return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)


def _check_architecture(model: CycleGanModel, stored: dict[str, np.ndarray]) -> None:
    expected = {
        f"{net}.{pname}": p.shape for net, params in _parameter_table(model).items() for pname, p in params.items()
    }
    missing = sorted(expected.keys() - stored.keys())
    extra = sorted(stored.keys() - expected.keys())
    if missing or extra:
        raise ShapeMismatch(
            f"checkpoint parameters do not match the model: {len(missing)} missing (e.g. {missing[:3]}), "
            f"{len(extra)} unexpected (e.g. {extra[:3]})"
        )
    for name, shape in expected.items():
        if stored[name].shape != shape:
            raise ShapeMismatch(f"parameter {name} stored as {stored[name].shape}, model expects {shape}")


def _read_header(data: bytes) -> tuple[ByteReader, TrainingConfig, int]:
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise BadMagic("not an MSTC checkpoint", offset=0)
    reader = ByteReader(data, CheckpointError)
    _, version, text_len = reader.unpack(_HEADER.format)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}", offset=4)
    text_offset = reader.pos
    try:
        values = parse_key_values(reader.take(text_len, "config text").decode("utf-8"))
        epoch = int(values.pop("epoch", "0"))
        cfg = TrainingConfig.model_validate(values)
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"embedded config is invalid: {exc}", offset=text_offset) from exc
    return reader, cfg, epoch


def decode_checkpoint(data: bytes, into: CycleGanModel | None = None) -> CycleGanModel:
    reader, cfg, epoch = _read_header(data)
    stored: dict[str, np.ndarray] = {}
    (n_params,) = reader.unpack("<I")
    for _ in range(n_params):
        name = _read_name(reader)
        (ndim,) = reader.unpack("<B")
        shape = tuple(reader.unpack(f"<{ndim}I"))
        if name in stored:
            raise CheckpointError(f"duplicate parameter {name}", offset=reader.pos)
        stored[name] = _read_f32(reader, shape)

    # without `into`, a table that disagrees with its own embedded config is drift too
    model = into if into is not None else build_model(cfg, np.random.default_rng(cfg.seed))
    _check_architecture(model, stored)

    table = _parameter_table(model)
    optimizers: dict[str, AdamState] = {}
    for net_name in NETWORK_NAMES:
        section = reader.pos
        found = _read_name(reader)
        if found != net_name:
            raise CheckpointError(f"optimizer section for {found!r}, expected {net_name!r}", offset=section)
        (t,) = reader.unpack("<Q")
        state = AdamState(model.config.lr, model.config.beta1, model.config.beta2)
        state.t = int(t)
        for pname, p in table[net_name].items():
            state.m[pname] = _read_f32(reader, p.shape).copy()
            state.v[pname] = _read_f32(reader, p.shape).copy()
        optimizers[net_name] = state
    if not reader.at_end():
        raise CheckpointError(f"{reader.remaining} unexpected bytes after optimizer state", offset=reader.pos)

    for net_name, params in table.items():
        for pname, p in params.items():
            p[...] = stored[f"{net_name}.{pname}"]
    model.optimizers = optimizers
    model.epochs_trained = epoch
    return model


def _read_bytes(path: str | Path) -> bytes:
    target = Path(path)
    try:
        return target.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {target}: {exc}") from exc


def load_checkpoint(path: str | Path, into: CycleGanModel | None = None) -> CycleGanModel:
    """Load a checkpoint; with `into`, parameters and optimizer state are copied into that model."""
    model = decode_checkpoint(_read_bytes(path), into)
    logger.info("checkpoint loaded", extra={"path": str(path), "epoch": model.epochs_trained})
    return model


def checkpoint_config(path: str | Path) -> tuple[TrainingConfig, int]:
    """Embedded config and epoch, without materialising the networks."""
    _, cfg, epoch = _read_header(_read_bytes(path))
    return cfg, epoch
