"""Encoder-decoder transformer over real-valued stroke tokens.

The encoder consumes TOKEN_WIDTH-wide stroke tokens blended with a
learnable index positional table; the decoder generates vocabulary tokens
autoregressively with causal self-attention and cross-attention over the
encoder output, greedy sampling only. Post-layer-norm throughout, ReLU
feed-forward blocks.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from . import vocab
from .autograd import Tensor

# parameter budgets of the original full-scale configuration; count_params
# reports deltas against them
FULL_SCALE_ENCODER_PARAMS = 523_520
FULL_SCALE_DECODER_PARAMS = 934_136


@dataclass(frozen=True)
class ModelConfig:
    d_f: int = 128          # token width
    d_p: int = 128          # encoder feed-forward width
    heads_enc: int = 4
    heads_dec: int = 4
    layers_enc: int = 5
    layers_dec: int = 4
    n: int = 24             # max encoder length; decoder length is n // 2
    alpha: float = 1.0      # positional blend on the encoder input
    max_pos: int = 200      # encoder positional table rows
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_f % self.heads_enc or self.d_f % self.heads_dec:
            raise ValueError("head count must divide d_f")
        if self.n % 2:
            raise ValueError("encoder length must be twice the decoder length")
        if self.n > self.max_pos:
            raise ValueError("positional table shorter than the input")

    @property
    def m(self) -> int:
        return self.n // 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


# named presets for the reference experiment series
PRESETS: dict[str, ModelConfig] = {
    "V1": ModelConfig(layers_enc=5, heads_enc=4, layers_dec=2, heads_dec=4, n=24),
    "V2": ModelConfig(layers_enc=5, heads_enc=4, layers_dec=4, heads_dec=4, n=24),
    "V3": ModelConfig(layers_enc=5, heads_enc=4, layers_dec=4, heads_dec=2, n=24),
    "V4": ModelConfig(layers_enc=5, heads_enc=4, layers_dec=4, heads_dec=4, n=24),
    "V5": ModelConfig(layers_enc=5, heads_enc=4, layers_dec=4, heads_dec=4, n=24),
    "V10": ModelConfig(layers_enc=5, heads_enc=4, layers_dec=4, heads_dec=4, n=48),
    "V11": ModelConfig(layers_enc=5, heads_enc=4, layers_dec=4, heads_dec=4, n=48),
}


def resolve_config(source) -> ModelConfig:
    """Accept a preset name, a dict, or a ModelConfig."""
    if isinstance(source, ModelConfig):
        return source
    if isinstance(source, str):
        if source not in PRESETS:
            raise ValueError(f"unknown preset {source!r}; have {sorted(PRESETS)}")
        return PRESETS[source]
    if isinstance(source, dict):
        if "preset" in source:
            base = resolve_config(source["preset"]).to_dict()
            base.update({k: v for k, v in source.items() if k != "preset"})
            return ModelConfig.from_dict(base)
        return ModelConfig.from_dict(source)
    raise TypeError(f"cannot build a ModelConfig from {type(source)}")


# -- parameters -----------------------------------------------------------------


def _glorot(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out)).astype(dtype)


def _attn_params(out, prefix, d, rng, dtype):
    for name in ("wq", "wk", "wv", "wo"):
        out[f"{prefix}.{name}"] = Tensor(_glorot(rng, d, d, dtype),
                                         requires_grad=True)
    for name in ("bq", "bk", "bv", "bo"):
        out[f"{prefix}.{name}"] = Tensor(np.zeros(d, dtype), requires_grad=True)


def _ln_params(out, prefix, d, dtype):
    out[f"{prefix}.g"] = Tensor(np.ones(d, dtype), requires_grad=True)
    out[f"{prefix}.b"] = Tensor(np.zeros(d, dtype), requires_grad=True)


def _ffn_params(out, prefix, d, width, rng, dtype):
    out[f"{prefix}.w1"] = Tensor(_glorot(rng, d, width, dtype), requires_grad=True)
    out[f"{prefix}.b1"] = Tensor(np.zeros(width, dtype), requires_grad=True)
    out[f"{prefix}.w2"] = Tensor(_glorot(rng, width, d, dtype), requires_grad=True)
    out[f"{prefix}.b2"] = Tensor(np.zeros(d, dtype), requires_grad=True)


def init_params(config: ModelConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, Tensor]:
    """Fresh parameter dict. Projections are uniform in
    +/-sqrt(6/(fan_in+fan_out)), biases zero, tables normal(0, 0.02)."""
    d, dp = config.d_f, config.d_p
    params: dict[str, Tensor] = {}
    params["enc.pos"] = Tensor(
        rng.normal(0.0, 0.02, (config.max_pos, d)).astype(dtype),
        requires_grad=True)
    for i in range(config.layers_enc):
        _attn_params(params, f"enc.{i}.attn", d, rng, dtype)
        _ln_params(params, f"enc.{i}.ln1", d, dtype)
        _ffn_params(params, f"enc.{i}.ffn", d, dp, rng, dtype)
        _ln_params(params, f"enc.{i}.ln2", d, dtype)
    params["dec.embed"] = Tensor(
        rng.normal(0.0, 0.02, (vocab.VOCAB_SIZE, d)).astype(dtype),
        requires_grad=True)
    params["dec.pos"] = Tensor(
        rng.normal(0.0, 0.02, (config.m, d)).astype(dtype), requires_grad=True)
    for i in range(config.layers_dec):
        _attn_params(params, f"dec.{i}.self", d, rng, dtype)
        _ln_params(params, f"dec.{i}.ln1", d, dtype)
        _attn_params(params, f"dec.{i}.cross", d, rng, dtype)
        _ln_params(params, f"dec.{i}.ln2", d, dtype)
        _ffn_params(params, f"dec.{i}.ffn", d, 3 * dp, rng, dtype)
        _ln_params(params, f"dec.{i}.ln3", d, dtype)
    params["dec.out.w"] = Tensor(_glorot(rng, d, vocab.VOCAB_SIZE, dtype),
                                 requires_grad=True)
    params["dec.out.b"] = Tensor(np.zeros(vocab.VOCAB_SIZE, dtype),
                                 requires_grad=True)
    return params


def count_params(config: ModelConfig) -> dict[str, int]:
    """Closed-form parameter counts for the canonical layout, with deltas
    against the full-scale reference budgets."""
    d, dp, v = config.d_f, config.d_p, vocab.VOCAB_SIZE
    attn = 4 * (d * d + d)
    ln = 2 * d
    enc_layer = attn + 2 * ln + (d * dp + dp) + (dp * d + d)
    encoder = config.layers_enc * enc_layer + config.max_pos * d
    dec_layer = 2 * attn + 3 * ln + (d * 3 * dp + 3 * dp) + (3 * dp * d + d)
    decoder = (config.layers_dec * dec_layer + v * d + config.m * d
               + (d * v + v))
    return {
        "encoder_layer": enc_layer,
        "encoder": encoder,
        "decoder_layer": dec_layer,
        "decoder": decoder,
        "total": encoder + decoder,
        "encoder_delta_vs_reference": encoder - FULL_SCALE_ENCODER_PARAMS,
        "decoder_delta_vs_reference": decoder - FULL_SCALE_DECODER_PARAMS,
    }


# -- forward passes ----------------------------------------------------------------


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    batch, t, d = x.shape
    flat = ag.reshape(x, (batch * t, d))
    out = ag.add(ag.matmul(flat, w), b)
    return ag.reshape(out, (batch, t, w.shape[1]))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    batch, t, d = x.shape
    x = ag.reshape(x, (batch, t, heads, d // heads))
    return ag.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    batch, heads, t, dh = x.shape
    x = ag.transpose(x, (0, 2, 1, 3))
    return ag.reshape(x, (batch, t, heads * dh))


def _attention(params, prefix: str, x_q: Tensor, x_kv: Tensor, heads: int,
               attend_mask: Optional[np.ndarray],
               dropout_p: float, rng) -> tuple[Tensor, np.ndarray]:
    """Multi-head attention block; returns output and detached weights
    (B, heads, Tq, Tk)."""
    dh = x_q.shape[-1] // heads
    q = _split_heads(_linear(x_q, params[f"{prefix}.wq"], params[f"{prefix}.bq"]), heads)
    k = _split_heads(_linear(x_kv, params[f"{prefix}.wk"], params[f"{prefix}.bk"]), heads)
    v = _split_heads(_linear(x_kv, params[f"{prefix}.wv"], params[f"{prefix}.bv"]), heads)
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))),
                      1.0 / np.sqrt(dh))
    weights = ag.masked_softmax(scores, attend_mask)
    if dropout_p > 0:
        weights_used = ag.dropout(weights, dropout_p, rng)
    else:
        weights_used = weights
    mixed = _merge_heads(ag.matmul(weights_used, v))
    out = _linear(mixed, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    return out, weights.data


def _ffn(params, prefix: str, x: Tensor) -> Tensor:
    h = ag.relu(_linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return _linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def encode(params: dict, config: ModelConfig, x, mask,
           rng=None) -> tuple[Tensor, list[np.ndarray]]:
    """Latent stroke representation.

    x: (B, n, d_f) float array or Tensor; mask: (B, n) bool, True on valid
    tokens. Input is x + alpha * positional rows; each layer applies masked
    self-attention and a feed-forward block, each followed by a residual
    connection and layer norm. Returns (Z, per-layer attention weights).
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    batch, n, d = x.shape
    if n != config.n or d != config.d_f:
        raise ValueError(f"input {x.shape} does not match config "
                         f"(n={config.n}, d_f={config.d_f})")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (batch, n):
        raise ValueError(f"mask shape {mask.shape} != {(batch, n)}")
    key_mask = mask[:, None, None, :]
    pos = ag.slice_(params["enc.pos"], slice(0, n))
    h = ag.add(x, ag.scale(pos, config.alpha))
    attn_maps = []
    for i in range(config.layers_enc):
        a, w = _attention(params, f"enc.{i}.attn", h, h, config.heads_enc,
                          key_mask, config.dropout, rng)
        attn_maps.append(w)
        h = ag.layer_norm(ag.add(h, a), params[f"enc.{i}.ln1.g"],
                          params[f"enc.{i}.ln1.b"])
        f = _ffn(params, f"enc.{i}.ffn", h)
        h = ag.layer_norm(ag.add(h, f), params[f"enc.{i}.ln2.g"],
                          params[f"enc.{i}.ln2.b"])
    return h, attn_maps


def decode_teacher_forced(params: dict, config: ModelConfig, z: Tensor,
                          enc_mask: np.ndarray, y_in: np.ndarray,
                          rng=None) -> tuple[Tensor, dict]:
    """Decoder logits for a forced prefix.

    y_in: (B, T) token ids starting with bos, T <= m. Causal self-attention
    keeps logits at position i independent of positions > i; cross-attention
    keys are masked to valid encoder tokens. Returns (B, T, V) logits and
    the attention maps.
    """
    y_in = np.asarray(y_in)
    if y_in.ndim != 2:
        raise ValueError("y_in must be (B, T)")
    batch, t = y_in.shape
    if t > config.m:
        raise ValueError(f"decoder input of {t} exceeds m={config.m}")
    if y_in.min() < 0 or y_in.max() >= vocab.VOCAB_SIZE:
        raise ValueError("token index out of vocabulary")
    enc_mask = np.asarray(enc_mask, dtype=bool)
    causal = np.tril(np.ones((t, t), dtype=bool))[None, None]
    cross_mask = enc_mask[:, None, None, :]
    h = ag.add(ag.embedding_lookup(params["dec.embed"], y_in),
               ag.slice_(params["dec.pos"], slice(0, t)))
    maps = {"self": [], "cross": []}
    for i in range(config.layers_dec):
        a, w = _attention(params, f"dec.{i}.self", h, h, config.heads_dec,
                          causal, config.dropout, rng)
        maps["self"].append(w)
        h = ag.layer_norm(ag.add(h, a), params[f"dec.{i}.ln1.g"],
                          params[f"dec.{i}.ln1.b"])
        a, w = _attention(params, f"dec.{i}.cross", h, z, config.heads_dec,
                          cross_mask, config.dropout, rng)
        maps["cross"].append(w)
        h = ag.layer_norm(ag.add(h, a), params[f"dec.{i}.ln2.g"],
                          params[f"dec.{i}.ln2.b"])
        f = _ffn(params, f"dec.{i}.ffn", h)
        h = ag.layer_norm(ag.add(h, f), params[f"dec.{i}.ln3.g"],
                          params[f"dec.{i}.ln3.b"])
    logits = _linear(h, params["dec.out.w"], params["dec.out.b"])
    return logits, maps


def greedy_decode(params: dict, config: ModelConfig, z: Tensor,
                  enc_mask: np.ndarray) -> tuple[list[int], np.ndarray]:
    """Argmax decoding from bos until eos or m tokens.

    Ties break to the lowest index. Returns the token ids (bos included)
    and the cross-attention stack (layers, heads, emitted, n) from the
    final step, whose row i belongs to the emission of ids[i + 1].
    """
    ids = [vocab.BOS_ID]
    maps = None
    with ag.no_grad():
        while len(ids) < config.m:
            logits, maps = decode_teacher_forced(
                params, config, z, enc_mask, np.array([ids]))
            nxt = int(np.argmax(logits.data[0, -1]))
            ids.append(nxt)
            if nxt == vocab.EOS_ID:
                break
    cross = np.stack([layer[0] for layer in maps["cross"]]) if maps else \
        np.zeros((config.layers_dec, config.heads_dec, 0, config.n),
                 dtype=np.float32)
    return ids, cross


def batched_greedy_decode(params: dict, config: ModelConfig, z: Tensor,
                          enc_mask: np.ndarray) -> list[list[int]]:
    """Greedy decoding of a whole batch at once; rows are truncated at
    their first eos, matching per-sample greedy_decode output."""
    batch = z.shape[0]
    ys = np.full((batch, 1), vocab.BOS_ID, dtype=np.int64)
    finished = np.zeros(batch, dtype=bool)
    with ag.no_grad():
        while ys.shape[1] < config.m and not finished.all():
            logits, _ = decode_teacher_forced(params, config, z, enc_mask, ys)
            nxt = np.argmax(logits.data[:, -1], axis=-1)
            nxt = np.where(finished, vocab.PAD_ID, nxt)
            finished |= nxt == vocab.EOS_ID
            ys = np.concatenate([ys, nxt[:, None]], axis=1)
    out = []
    for row in ys:
        ids = [int(row[0])]
        for tok in row[1:]:
            if tok == vocab.PAD_ID:
                break
            ids.append(int(tok))
            if tok == vocab.EOS_ID:
                break
        out.append(ids)
    return out


def stack_inputs(tokenized: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """TokenizedInput list -> batched (x, mask) arrays."""
    x = np.stack([t.tokens for t in tokenized])
    mask = np.stack([t.mask for t in tokenized])
    return x, mask


# -- attention export -----------------------------------------------------------


def export_attention(params: dict, config: ModelConfig, tokenized,
                     input_labels: Optional[list[str]] = None) -> dict:
    """Cross-attention report for one input: greedy-decodes and returns a
    json-ready {tokens_in, tokens_out, layers: [heads: [matrix]]} mapping."""
    x, mask = stack_inputs([tokenized])
    with ag.no_grad():
        z, _ = encode(params, config, x, mask)
    ids, cross = greedy_decode(params, config, z, mask)
    if input_labels is None:
        input_labels = [f"s{i}" for i in range(int(mask[0].sum()) - 2)]
    tokens_in = [vocab.BOS] + list(input_labels) + [vocab.EOS]
    tokens_in += [vocab.PAD] * (config.n - len(tokens_in))
    return {
        "tokens_in": tokens_in,
        "tokens_out": vocab.decode(ids[1:]),
        "layers": [[head.tolist() for head in layer] for layer in cross],
    }


def input_glyph_labels(sample) -> list[str]:
    """Per-stroke glyph symbols, in stroke order."""
    return [sample.glyphs[s.glyph_id].symbol for s in sample.strokes]


# -- checkpoints ------------------------------------------------------------------

_MAGIC = b"IMCK"
_CKPT_VERSION = 1


def _write_tensor(fh, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_tensor(fh) -> np.ndarray:
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
    return data.astype(np.float32)


def save_checkpoint(path: str, params: dict[str, Tensor],
                    config: ModelConfig, epoch: int = 0,
                    meta: Optional[dict] = None,
                    opt_state: Optional[dict] = None,
                    rng_state: Optional[dict] = None):
    """Versioned container: json header, then shape-prefixed little-endian
    float32 tensors in header order."""
    names = sorted(params)
    opt_names = sorted(opt_state["m"]) if opt_state else []
    header = {
        "version": _CKPT_VERSION,
        "config": config.to_dict(),
        "epoch": epoch,
        "meta": meta or {},
        "tensors": names,
        "opt_step": opt_state["step"] if opt_state else None,
        "opt_tensors": opt_names,
        "rng_state": rng_state,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            _write_tensor(fh, params[name].data)
        for name in opt_names:
            _write_tensor(fh, opt_state["m"][name])
            _write_tensor(fh, opt_state["v"][name])


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str) -> dict:
    """Returns {params, config, epoch, meta, opt_state, rng_state}."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    with fh:
        if fh.read(4) != _MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len))
        params = {name: Tensor(_read_tensor(fh), requires_grad=True)
                  for name in header["tensors"]}
        opt_state = None
        if header["opt_tensors"]:
            opt_state = {"step": header["opt_step"], "m": {}, "v": {}}
            for name in header["opt_tensors"]:
                opt_state["m"][name] = _read_tensor(fh)
                opt_state["v"][name] = _read_tensor(fh)
    return {
        "params": params,
        "config": ModelConfig.from_dict(header["config"]),
        "epoch": header["epoch"],
        "meta": header["meta"],
        "opt_state": opt_state,
        "rng_state": header["rng_state"],
    }
