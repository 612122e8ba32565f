"""Binary model weight files.

Layout (little-endian)::

    b"PLSW"  u16 version (=1)
    u32 n_layers, d_model, n_heads, vocab_size, max_seq, d_ff
    float32 tensors, row-major, in order:
        token_emb (V x d), pos_emb (max_seq x d),
        per layer: ln1_gamma, ln1_beta, w_q, w_k, w_v, w_o, ln2_gamma, ln2_beta,
                   w_1 (d x d_ff), b_1, w_2 (d_ff x d), b_2,
        head (d x V)
"""

import logging
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from ..core.errors import FormatError, RangeError, ShapeError
from ..core.types import GeluMode, ModelConfig
from ..mpc.nn import ModelWeights

logger = logging.getLogger(__name__)

MAGIC = b"PLSW"
VERSION = 1
HEADER = struct.Struct("<4sH6I")
FLOAT = np.dtype("<f4")

CONFIG_FIELDS = ("n_layers", "d_model", "n_heads", "vocab_size", "max_seq", "d_ff")


def encode_weights(weights: ModelWeights) -> bytes:
    if weights.shared:
        raise FormatError("shared weights cannot be written to a file")
    cfg = weights.config
    parts = [HEADER.pack(MAGIC, VERSION, cfg.n_layers, cfg.d_model, cfg.n_heads, cfg.vocab_size,
                         cfg.max_seq, cfg.ffn_width)]
    parts += [np.ascontiguousarray(t, dtype=FLOAT).tobytes() for t in weights.tensors()]
    return b"".join(parts)


def decode_weights(blob: bytes, temperature: float = 1.0,
                   gelu_mode: GeluMode = GeluMode.PIECEWISE) -> ModelWeights:
    if len(blob) < HEADER.size:
        raise FormatError("weight file is shorter than its header", field="header")
    magic, version, *dims = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", field="magic")
    if version != VERSION:
        raise FormatError(f"unsupported weight file version {version}", field="version")
    try:
        config = ModelConfig(**dict(zip(CONFIG_FIELDS, dims)), temperature=temperature, gelu_mode=gelu_mode)
    except PydanticValidationError as exc:
        loc = exc.errors()[0]["loc"]
        raise FormatError(f"invalid model header: {exc.errors()[0]['msg']}",
                          field=str(loc[0]) if loc else "header") from exc

    shapes = ModelWeights(config, None, None).expected_shapes()
    needed = HEADER.size + sum(int(np.prod(s)) for s in shapes) * FLOAT.itemsize
    if len(blob) != needed:
        raise FormatError(f"weight file has {len(blob)} bytes, header implies {needed}", field="tensors")
    tensors, offset = [], HEADER.size
    for shape in shapes:
        count = int(np.prod(shape))
        tensors.append(np.frombuffer(blob, dtype=FLOAT, count=count, offset=offset).reshape(shape).astype(np.float64))
        offset += count * FLOAT.itemsize
    try:
        return ModelWeights.from_tensors(config, tensors)
    except (ShapeError, RangeError) as exc:
        raise FormatError(str(exc), field="tensors") from exc


def save_weights(weights: ModelWeights, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_weights(weights))
    logger.info(f"Saved {weights.config.n_layers}-layer model to {path}")
    return path


def load_weights(path: Union[str, Path], temperature: float = 1.0,
                 gelu_mode: GeluMode = GeluMode.PIECEWISE) -> ModelWeights:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read weight file {path}: {exc}", field="path") from exc
    weights = decode_weights(blob, temperature, gelu_mode)
    logger.info(f"Loaded model {path.name}: L={weights.config.n_layers} d={weights.config.d_model} "
                f"V={weights.config.vocab_size}")
    return weights


def resolve_model(path: Optional[Union[str, Path]], config: Optional[ModelConfig] = None,
                  seed: int = 0) -> ModelWeights:
    """Weights from ``path`` when given, otherwise the seeded random toy model."""
    if path:
        cfg = config or ModelConfig()
        return load_weights(path, cfg.temperature, cfg.gelu_mode)
    return ModelWeights.random(config or ModelConfig(), seed)
