"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"FADC" | u32 format_version | u32 header_len | header JSON
    u32 leaf_count | leaf*            model leaves, lexicographic path order
    u32 leaf_count | leaf*            optimizer moments (may be empty)

    leaf := u16 path_len | path utf-8 | u8 ndim | i64*ndim shape | u8 frozen | f64* values

Values are always written as float64, so float32 models round-trip exactly too.
"""
import dataclasses
import hashlib
import io
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch
from omegaconf import DictConfig, OmegaConf

from fedadapt.core.config import ModelConfig
from fedadapt.core.errors import CheckpointError
from fedadapt.core.utils import get_logger
from fedadapt.models.adapters import AdapterSpec
from fedadapt.models.conformer import DecoderHead, SpeechModel
from fedadapt.models.params import ParameterTree

log = get_logger(__name__)

MAGIC = b"FADC"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    model_config: ModelConfig
    adapter_spec: Optional[AdapterSpec]
    has_decoder: bool
    leaves: "OrderedDict[str, Tuple[torch.Tensor, bool]]"
    optimizer: Optional[dict] = None
    metadata: dict = field(default_factory=dict)
    seed: int = 0


def model_config_dict(cfg) -> dict:
    if isinstance(cfg, DictConfig):
        return OmegaConf.to_container(cfg, resolve=True)
    if dataclasses.is_dataclass(cfg):
        return dataclasses.asdict(cfg)
    return dict(cfg)


def _write_leaf(buf: io.BytesIO, path: str, value: torch.Tensor, frozen: bool) -> None:
    encoded = path.encode("utf-8")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<B", value.dim()))
    buf.write(struct.pack(f"<{value.dim()}q", *value.shape))
    buf.write(struct.pack("<B", int(frozen)))
    buf.write(value.detach().cpu().numpy().astype("<f8").tobytes())


def _read_exact(stream: io.BufferedIOBase, size: int) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise CheckpointError("truncated checkpoint")
    return data


def _read_leaf(stream) -> Tuple[str, torch.Tensor, bool]:
    (path_len,) = struct.unpack("<H", _read_exact(stream, 2))
    path = _read_exact(stream, path_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(stream, 1))
    shape = struct.unpack(f"<{ndim}q", _read_exact(stream, 8 * ndim))
    (frozen,) = struct.unpack("<B", _read_exact(stream, 1))
    count = int(np.prod(shape, dtype=np.int64))
    values = np.frombuffer(_read_exact(stream, 8 * count), dtype="<f8").reshape(shape)
    return path, torch.from_numpy(values.astype(np.float64)), bool(frozen)


def encode_checkpoint(
    model: SpeechModel,
    optimizer_state: Optional[dict] = None,
    metadata: Optional[dict] = None,
) -> bytes:
    tree = ParameterTree(model)
    spec = model.adapter_spec
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model_config_dict(model.cfg),
        "adapter_spec": spec.to_dict() if spec is not None else None,
        "has_decoder": model.decoder is not None,
        "seed": model.seed,
        "optimizer": None,
        "metadata": metadata or {},
    }
    moments = OrderedDict()
    if optimizer_state is not None:
        header["optimizer"] = {k: v for k, v in optimizer_state.items() if k not in ("m", "v")}
        for kind in ("m", "v"):
            for path in sorted(optimizer_state[kind]):
                moments[f"{kind}/{path}"] = optimizer_state[kind][path]

    buf = io.BytesIO()
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
    buf.write(header_bytes)
    leaves = tree.leaves()
    buf.write(struct.pack("<I", len(leaves)))
    for path, p in leaves.items():
        _write_leaf(buf, path, p, not p.requires_grad)
    buf.write(struct.pack("<I", len(moments)))
    for path, value in moments.items():
        _write_leaf(buf, path, value, False)
    return buf.getvalue()


def save_checkpoint(
    path: PathLike,
    model: SpeechModel,
    optimizer_state: Optional[dict] = None,
    metadata: Optional[dict] = None,
) -> str:
    """Writes ``model`` to ``path`` and returns the file digest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(model, optimizer_state, metadata)
    path.write_bytes(data)
    digest = hashlib.sha256(data).hexdigest()
    log.info(f"Saved checkpoint {path} ({digest[:12]})")
    return digest


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with path.open("rb") as stream:
        if stream.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a fedadapt checkpoint")
        version, header_len = struct.unpack("<II", _read_exact(stream, 8))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version {version}")
        header = json.loads(_read_exact(stream, header_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(stream, 4))
        leaves = OrderedDict()
        for _ in range(count):
            leaf_path, value, frozen = _read_leaf(stream)
            leaves[leaf_path] = (value, frozen)
        (moment_count,) = struct.unpack("<I", _read_exact(stream, 4))
        optimizer = None
        if header["optimizer"] is not None:
            optimizer = dict(header["optimizer"], m=OrderedDict(), v=OrderedDict())
        for _ in range(moment_count):
            leaf_path, value, _ = _read_leaf(stream)
            kind, param_path = leaf_path.split("/", 1)
            optimizer[kind][param_path] = value

    return Checkpoint(
        model_config=ModelConfig(**header["model_config"]),
        adapter_spec=AdapterSpec.from_dict(header["adapter_spec"]),
        has_decoder=header["has_decoder"],
        leaves=leaves,
        optimizer=optimizer,
        metadata=header["metadata"],
        seed=header["seed"],
    )


def restore_model(ckpt: Checkpoint, dtype: torch.dtype = torch.float64) -> SpeechModel:
    """Rebuilds the model a checkpoint describes, values and freeze flags included."""
    model = SpeechModel(
        ckpt.model_config, ckpt.adapter_spec, ckpt.seed, with_decoder=ckpt.has_decoder, dtype=dtype
    )
    tree = ParameterTree(model)
    if set(tree.paths()) != set(ckpt.leaves):
        raise CheckpointError("checkpoint leaves do not match the model it describes")
    tree.load_values({k: v.to(dtype) for k, (v, _) in ckpt.leaves.items()})
    for path, (_, frozen) in ckpt.leaves.items():
        tree[path].requires_grad_(not frozen)
    return model


def attach_decoder(model: SpeechModel, seed: Optional[int] = None) -> SpeechModel:
    if model.decoder is None:
        seed = model.seed + SpeechModel.DECODER_SEED_OFFSET if seed is None else seed
        model.decoder = DecoderHead(model.cfg.d, model.cfg.vocab_size, seed, model.dtype)
    return model


def file_digest(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
