"""Transformer set encoder turning exemplar embeddings into one classifier.

A learnable CLS token is prepended to the exemplar embeddings; the sequence
passes through pre-norm transformer blocks (LN -> attention -> residual,
LN -> GELU MLP -> residual) without positional encoding, so the encoder is
permutation-invariant over exemplars. The CLS position of the final layer,
L2-normalized, is the vision-based classifier.

Checkpoint format ``OVAG`` (little-endian): magic, u16 version, u32 blocks,
u32 dim, u32 mlp dim, u32 heads, u64 seed, then every parameter as float32
in declared order.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .bank import atomic_write_bytes
from .errors import BankCorruptionError, BankFormatError, ConfigError, ValidationError

_CKPT_MAGIC = b"OVAG"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class AggregatorConfig:
    blocks: int = 4
    dim: int = 512
    mlp_dim: int = 2048
    heads: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    def parameter_count(self) -> int:
        d, m = self.dim, self.mlp_dim
        per_block = 4 * d * d + 2 * (2 * d) + d * m + m + m * d + d
        return self.blocks * per_block + d


def _block_param_names(i: int) -> list[str]:
    prefix = f"block{i}."
    return [prefix + n for n in (
        "ln1.gain", "ln1.shift", "attn.wq", "attn.wk", "attn.wv", "attn.wo",
        "ln2.gain", "ln2.shift", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2")]


def parameter_order(config: AggregatorConfig) -> list[str]:
    names = ["cls_token"]
    for i in range(config.blocks):
        names.extend(_block_param_names(i))
    return names


class AggregatorModel:
    """Configuration plus the ParamSet holding every learnable weight."""

    def __init__(self, config: AggregatorConfig, params: ParamSet):
        self.config = config
        self.params = params
        expected = config.parameter_count()
        actual = params.n_values()
        if actual != expected:
            raise ConfigError(f"parameter count {actual} != expected {expected}")

    def copy(self) -> "AggregatorModel":
        return AggregatorModel(self.config, self.params.copy())

    def astype(self, dtype) -> "AggregatorModel":
        return AggregatorModel(self.config, self.params.astype(dtype))


def init_model(config: AggregatorConfig) -> AggregatorModel:
    """Seeded initialization: projections scaled-normal with std 1/sqrt(dim),
    layer norms identity, CLS token std 0.02, biases zero."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    d, m = config.dim, config.mlp_dim
    proj_std = 1.0 / math.sqrt(d)
    params = ParamSet()
    params.add("cls_token", (rng.standard_normal((1, d)) * 0.02).astype(np.float32))
    for i in range(config.blocks):
        prefix = f"block{i}."
        params.add(prefix + "ln1.gain", np.ones(d, dtype=np.float32))
        params.add(prefix + "ln1.shift", np.zeros(d, dtype=np.float32))
        for name in ("attn.wq", "attn.wk", "attn.wv", "attn.wo"):
            params.add(prefix + name,
                       (rng.standard_normal((d, d)) * proj_std).astype(np.float32))
        params.add(prefix + "ln2.gain", np.ones(d, dtype=np.float32))
        params.add(prefix + "ln2.shift", np.zeros(d, dtype=np.float32))
        params.add(prefix + "mlp.w1", (rng.standard_normal((d, m)) * proj_std).astype(np.float32))
        params.add(prefix + "mlp.b1", np.zeros(m, dtype=np.float32))
        params.add(prefix + "mlp.w2", (rng.standard_normal((m, d)) * (1.0 / math.sqrt(m))).astype(np.float32))
        params.add(prefix + "mlp.b2", np.zeros(d, dtype=np.float32))
    return AggregatorModel(config, params)


def _attention(x: Tensor, params: ParamSet, prefix: str, heads: int) -> Tensor:
    d = x.shape[1]
    head_dim = d // heads
    inv_sqrt = 1.0 / math.sqrt(head_dim)
    q = ad.matmul(x, params[prefix + "attn.wq"])
    k = ad.matmul(x, params[prefix + "attn.wk"])
    v = ad.matmul(x, params[prefix + "attn.wv"])
    contexts = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = ad.cols(q, lo, hi)
        kh = ad.cols(k, lo, hi)
        vh = ad.cols(v, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_sqrt)
        weights = ad.softmax(scores)
        contexts.append(ad.matmul(weights, vh))
    merged = ad.concat(contexts, axis=1) if heads > 1 else contexts[0]
    return ad.matmul(merged, params[prefix + "attn.wo"])


def aggregate_graph(params: ParamSet, exemplars: Tensor, config: AggregatorConfig) -> Tensor:
    """Differentiable forward pass: (k, dim) exemplar rows -> (1, dim) unit
    classifier read from the CLS position."""
    x = ad.concat([params["cls_token"], exemplars], axis=0)
    for i in range(config.blocks):
        prefix = f"block{i}."
        normed = ad.layer_norm(x, params[prefix + "ln1.gain"], params[prefix + "ln1.shift"])
        x = ad.add(x, _attention(normed, params, prefix, config.heads))
        normed = ad.layer_norm(x, params[prefix + "ln2.gain"], params[prefix + "ln2.shift"])
        hidden = ad.gelu(ad.add(ad.matmul(normed, params[prefix + "mlp.w1"]),
                                params[prefix + "mlp.b1"]))
        mlp_out = ad.add(ad.matmul(hidden, params[prefix + "mlp.w2"]),
                         params[prefix + "mlp.b2"])
        x = ad.add(x, mlp_out)
    return ad.l2_normalize(ad.rows(x, 0, 1))


def aggregate(model: AggregatorModel, exemplars: np.ndarray | list[np.ndarray]) -> np.ndarray:
    """Aggregate k exemplar embeddings into one unit-norm classifier."""
    matrix = np.asarray(exemplars, dtype=model.params["cls_token"].data.dtype)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise ValidationError("exemplars must form a nonempty (k, dim) matrix")
    if matrix.shape[1] != model.config.dim:
        raise ValidationError(
            f"exemplar dimension {matrix.shape[1]} != model dimension {model.config.dim}")
    out = aggregate_graph(model.params, ad.constant(matrix), model.config)
    return np.array(out.data[0], copy=True)


def save_model(model: AggregatorModel, path: str) -> None:
    cfg = model.config
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<HIIIIQ", _CKPT_VERSION, cfg.blocks, cfg.dim,
                          cfg.mlp_dim, cfg.heads, cfg.seed))
    for name in parameter_order(cfg):
        buf.write(model.params[name].data.astype("<f4").tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_model(path: str) -> AggregatorModel:
    with open(path, "rb") as fh:
        payload = fh.read()
    if payload[:4] != _CKPT_MAGIC:
        raise BankFormatError(f"{path}: bad magic {payload[:4]!r}, expected {_CKPT_MAGIC!r}")
    header = struct.calcsize("<HIIIIQ")
    if len(payload) < 4 + header:
        raise BankCorruptionError(f"{path}: truncated header")
    version, blocks, dim, mlp_dim, heads, seed = struct.unpack(
        "<HIIIIQ", payload[4:4 + header])
    if version != _CKPT_VERSION:
        raise BankFormatError(f"{path}: unsupported version {version}")
    config = AggregatorConfig(blocks=blocks, dim=dim, mlp_dim=mlp_dim, heads=heads, seed=seed)
    expected_bytes = 4 + header + 4 * config.parameter_count()
    if len(payload) != expected_bytes:
        raise BankCorruptionError(
            f"{path}: payload is {len(payload)} bytes, expected {expected_bytes}")
    template = init_model(config)
    offset = 4 + header
    values: dict[str, np.ndarray] = {}
    for name in parameter_order(config):
        shape = template.params[name].data.shape
        count = int(np.prod(shape))
        chunk = payload[offset:offset + 4 * count]
        values[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float32)
        offset += 4 * count
    template.params.load_values(values)
    return template
