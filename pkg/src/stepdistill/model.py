"""Small encoder-decoder transformer students.

Pre-norm architecture with learned absolute position embeddings and a
single embedding table shared by the encoder input, decoder input, and
output projection. Sizes are deliberately tiny: the point of the model
ladder is relative comparisons across sizes, not absolute capability.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as t
from .tensor import Tensor
from .tokenizer import BOS, EOS, NUM_RESERVED, PAD

# Additive attention-mask value. Large enough that exp() underflows to zero
# after max-subtraction, small enough to stay finite for the softmax checks.
_MASK = -1e30

CHECKPOINT_MAGIC = b"SDCP"
CHECKPOINT_VERSION = 1

# (d_model, n_layers) ladder used by the size sweeps.
SIZE_LADDER = {"small": (64, 2), "base": (128, 4), "large": (256, 6)}


class SequenceTooLong(ValueError):
    """Input longer than the position table the model was built with."""


class BatchShapeMismatch(ValueError):
    """src/tgt batches disagree in rank or batch size."""


class CorruptCheckpoint(RuntimeError):
    """Checkpoint bytes do not describe a loadable model."""


class IoFailure(RuntimeError):
    """Filesystem error while reading or writing a checkpoint."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    vocab_size: int
    max_src_len: int
    max_tgt_len: int

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive int, got {value!r}")
        if self.d_model % self.n_heads:
            raise ValueError(
                f"n_heads ({self.n_heads}) must divide d_model ({self.d_model})"
            )
        if self.vocab_size < NUM_RESERVED:
            raise ValueError(f"vocab_size must be >= {NUM_RESERVED}")


def config_for_size(
    size: str, vocab_size: int, max_src_len: int = 64, max_tgt_len: int = 64
) -> ModelConfig:
    """Instantiate a ladder entry; heads and feed-forward width scale with d_model."""
    if size not in SIZE_LADDER:
        raise ValueError(f"size must be one of {sorted(SIZE_LADDER)}, got {size!r}")
    d_model, n_layers = SIZE_LADDER[size]
    return ModelConfig(
        d_model=d_model,
        n_layers=n_layers,
        n_heads=d_model // 32,
        d_ff=2 * d_model,
        vocab_size=vocab_size,
        max_src_len=max_src_len,
        max_tgt_len=max_tgt_len,
    )


def _param_specs(config: ModelConfig):
    """Canonical (name, shape, init-kind) list; checkpoint order equals this order."""
    d, f = config.d_model, config.d_ff
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("embedding", (config.vocab_size, d), "weight"),
        ("pos_src", (config.max_src_len, d), "weight"),
        ("pos_tgt", (config.max_tgt_len, d), "weight"),
    ]

    def attn(prefix: str):
        for proj in ("q", "k", "v", "o"):
            specs.append((f"{prefix}.w{proj}", (d, d), "weight"))
            specs.append((f"{prefix}.b{proj}", (d,), "zero"))

    def norm(prefix: str):
        specs.append((f"{prefix}.gain", (d,), "one"))
        specs.append((f"{prefix}.bias", (d,), "zero"))

    def ffn(prefix: str):
        specs.append((f"{prefix}.w1", (d, f), "weight"))
        specs.append((f"{prefix}.b1", (f,), "zero"))
        specs.append((f"{prefix}.w2", (f, d), "weight"))
        specs.append((f"{prefix}.b2", (d,), "zero"))

    for i in range(config.n_layers):
        norm(f"enc{i}.norm1")
        attn(f"enc{i}.attn")
        norm(f"enc{i}.norm2")
        ffn(f"enc{i}.ffn")
    for i in range(config.n_layers):
        norm(f"dec{i}.norm1")
        attn(f"dec{i}.self")
        norm(f"dec{i}.norm2")
        attn(f"dec{i}.cross")
        norm(f"dec{i}.norm3")
        ffn(f"dec{i}.ffn")
    norm("enc_norm")
    norm("dec_norm")
    return specs


class SeqModel:
    """Config plus a named, ordered parameter table (all requires_grad)."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def build_model(config: ModelConfig, seed: int = 0) -> SeqModel:
    """Fresh model: weights ~ normal(0, 0.02), biases zero, norm gains one."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, kind in _param_specs(config):
        if kind == "weight":
            data = rng.normal(0.0, 0.02, shape)
        elif kind == "zero":
            data = np.zeros(shape)
        else:
            data = np.ones(shape)
        params[name] = Tensor(data, requires_grad=True)
    return SeqModel(config, params)


def param_count(config: ModelConfig) -> int:
    """Closed-form scalar parameter count.

    Per attention block: 4 d^2 weights + 4 d biases. Per feed-forward:
    2 d d_ff + d_ff + d. Per norm: 2 d. Encoder layer = attn + ffn +
    2 norms; decoder layer = 2 attn + ffn + 3 norms; plus the tied
    embedding (V d), both position tables, and the two final norms.
    """
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    attn = 4 * (d * d + d)
    ffn = 2 * d * f + f + d
    norm = 2 * d
    enc_layer = attn + ffn + 2 * norm
    dec_layer = 2 * attn + ffn + 3 * norm
    return (
        v * d
        + (config.max_src_len + config.max_tgt_len) * d
        + config.n_layers * (enc_layer + dec_layer)
        + 2 * norm
    )


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """[..., d_in] @ [d_in, d_out] + bias, flattened to one 2-D product."""
    lead = x.shape[:-1]
    flat = t.reshape(x, (-1, x.shape[-1]))
    out = t.add(t.matmul(flat, w), b)
    return t.reshape(out, (*lead, w.shape[-1]))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, s, d = x.shape
    return t.transpose(t.reshape(x, (b, s, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, s, dh = x.shape
    return t.reshape(t.transpose(x, (0, 2, 1, 3)), (b, s, h * dh))


def _attention(
    model: SeqModel,
    prefix: str,
    q_in: Tensor,
    kv_in: Tensor,
    mask: np.ndarray | None,
) -> Tensor:
    p = model.params
    h = model.config.n_heads
    q = _split_heads(_linear(q_in, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), h)
    k = _split_heads(_linear(kv_in, p[f"{prefix}.wk"], p[f"{prefix}.bk"]), h)
    v = _split_heads(_linear(kv_in, p[f"{prefix}.wv"], p[f"{prefix}.bv"]), h)
    scores = t.scale(t.matmul(q, t.transpose(k, (0, 1, 3, 2))), q.shape[-1] ** -0.5)
    if mask is not None:
        scores = t.add(scores, Tensor(np.broadcast_to(mask, scores.shape)))
    ctx = t.matmul(t.softmax(scores), v)
    return _linear(_merge_heads(ctx), p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _ffn(model: SeqModel, prefix: str, x: Tensor) -> Tensor:
    p = model.params
    hidden = t.relu(_linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return _linear(hidden, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _norm(model: SeqModel, prefix: str, x: Tensor) -> Tensor:
    p = model.params
    return t.layer_norm(x, p[f"{prefix}.gain"], p[f"{prefix}.bias"])


def _check_batch(model: SeqModel, src: np.ndarray, tgt_in: np.ndarray):
    if src.ndim != 2 or tgt_in.ndim != 2:
        raise BatchShapeMismatch(
            f"src and tgt_in must be rank-2, got {src.shape} and {tgt_in.shape}"
        )
    if src.shape[0] != tgt_in.shape[0]:
        raise BatchShapeMismatch(
            f"batch sizes differ: src {src.shape[0]} vs tgt {tgt_in.shape[0]}"
        )
    if src.shape[1] > model.config.max_src_len:
        raise SequenceTooLong(
            f"src length {src.shape[1]} > max_src_len {model.config.max_src_len}"
        )
    if tgt_in.shape[1] > model.config.max_tgt_len:
        raise SequenceTooLong(
            f"tgt length {tgt_in.shape[1]} > max_tgt_len {model.config.max_tgt_len}"
        )


def encode_source(model: SeqModel, src: np.ndarray) -> Tensor:
    """Encoder stack over a [B, S] id batch; pad positions masked out as keys."""
    src = np.asarray(src)
    cfg = model.config
    b, s = src.shape
    x = t.add(
        t.embedding_lookup(model.params["embedding"], src),
        t.slice_axis(model.params["pos_src"], 0, 0, s),
    )
    pad_mask = np.where(src == PAD, _MASK, 0.0)[:, None, None, :]
    self_mask = np.broadcast_to(pad_mask, (b, cfg.n_heads, s, s))
    for i in range(cfg.n_layers):
        normed = _norm(model, f"enc{i}.norm1", x)
        x = t.add(x, _attention(model, f"enc{i}.attn", normed, normed, self_mask))
        x = t.add(x, _ffn(model, f"enc{i}.ffn", _norm(model, f"enc{i}.norm2", x)))
    return _norm(model, "enc_norm", x)


def forward_logits(model: SeqModel, src: np.ndarray, tgt_in: np.ndarray) -> Tensor:
    """Vocabulary logits [B, T, V] for teacher-forced decoder inputs.

    Decoder self-attention is causally masked; encoder pad positions are
    masked as keys in both encoder self-attention and cross-attention.
    """
    src = np.asarray(src)
    tgt_in = np.asarray(tgt_in)
    _check_batch(model, src, tgt_in)
    memory = encode_source(model, src)
    return decode_logits(model, memory, src, tgt_in)


def decode_logits(
    model: SeqModel, memory: Tensor, src: np.ndarray, tgt_in: np.ndarray
) -> Tensor:
    """Decoder stack over precomputed encoder output (memory reuse path)."""
    cfg = model.config
    b, s = src.shape
    tt = tgt_in.shape[1]
    y = t.add(
        t.embedding_lookup(model.params["embedding"], tgt_in),
        t.slice_axis(model.params["pos_tgt"], 0, 0, tt),
    )
    causal = np.triu(np.full((tt, tt), _MASK), k=1)
    cross = np.broadcast_to(
        np.where(src == PAD, _MASK, 0.0)[:, None, None, :], (b, cfg.n_heads, tt, s)
    )
    for i in range(cfg.n_layers):
        sa_in = _norm(model, f"dec{i}.norm1", y)
        y = t.add(y, _attention(model, f"dec{i}.self", sa_in, sa_in, causal))
        y = t.add(
            y, _attention(model, f"dec{i}.cross", _norm(model, f"dec{i}.norm2", y), memory, cross)
        )
        y = t.add(y, _ffn(model, f"dec{i}.ffn", _norm(model, f"dec{i}.norm3", y)))
    y = _norm(model, "dec_norm", y)
    flat = t.reshape(y, (-1, cfg.d_model))
    logits = t.matmul(flat, t.transpose(model.params["embedding"], (1, 0)))
    return t.reshape(logits, (b, tt, cfg.vocab_size))


def greedy_decode(model: SeqModel, src, max_len: int) -> list[int]:
    """Argmax decoding from BOS; stops at EOS or after max_len tokens.

    Ties resolve to the lowest token id (argmax first-hit). The returned
    ids exclude BOS and EOS. Deterministic by construction.
    """
    src = np.asarray(src).reshape(1, -1)
    if src.shape[1] > model.config.max_src_len:
        raise SequenceTooLong(
            f"src length {src.shape[1]} > max_src_len {model.config.max_src_len}"
        )
    memory = encode_source(model, src)
    ids = [BOS]
    for _ in range(max_len):
        if len(ids) > model.config.max_tgt_len:
            break
        logits = decode_logits(model, memory, src, np.asarray([ids]))
        token = int(np.argmax(logits.data[0, -1]))
        if token == EOS:
            break
        ids.append(token)
    return ids[1:]


def save_model(model: SeqModel, path: str | Path) -> None:
    """Binary checkpoint: magic, version, config block, parameters in order.

    Layout (little-endian): 4 magic bytes, u32 version, 7 u32 config fields
    (d_model, n_layers, n_heads, d_ff, vocab_size, max_src_len, max_tgt_len),
    then every parameter's float64 payload in canonical _param_specs order.
    """
    cfg = model.config
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack(
        "<7I",
        cfg.d_model,
        cfg.n_layers,
        cfg.n_heads,
        cfg.d_ff,
        cfg.vocab_size,
        cfg.max_src_len,
        cfg.max_tgt_len,
    )
    for name, _, _ in _param_specs(cfg):
        blob += np.ascontiguousarray(model.params[name].data, dtype="<f8").tobytes()
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_model(path: str | Path) -> SeqModel:
    """Inverse of save_model; bitwise round-trip of config and parameters."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    header = 4 + 4 + 7 * 4
    if len(raw) < header or raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"unsupported version {version}")
    fields = struct.unpack_from("<7I", raw, 8)
    try:
        config = ModelConfig(*fields)
    except ValueError as exc:
        raise CorruptCheckpoint(f"invalid config block: {exc}") from exc
    expected = header + 8 * param_count(config)
    if len(raw) != expected:
        raise CorruptCheckpoint(
            f"payload length {len(raw)} != expected {expected} for declared config"
        )
    params: dict[str, Tensor] = {}
    offset = header
    for name, shape, _ in _param_specs(config):
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape)
        params[name] = Tensor(arr.copy(), requires_grad=True)
        offset += 8 * n
    return SeqModel(config, params)
