"""Training loop, evaluation metrics and the ablation harness.

Teacher-forced cross-entropy with Adam and a halving learning-rate
schedule. The encoder can be trained from scratch, frozen from a source
checkpoint (transfer protocol), or fine-tuned end to end from a checkpoint.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from . import grammar, metrics, model, strokes, vocab
from .autograd import Tensor
from .model import ModelConfig

ENCODER_PREFIX = "enc."


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 8e-4
    lr_halve_every: int = 30
    epochs: int = 200
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    encoder_mode: str = "scratch"        # scratch | frozen | fine_tune
    seed: int = 0
    patience: Optional[int] = None       # epochs without val-LA improvement
    target_val_la: Optional[float] = None  # stop early once reached
    label_kind: str = "ascii"            # ascii | rpn
    source_checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.lr <= 0 or self.lr_halve_every <= 0 or self.batch_size <= 0:
            raise ValueError("rates and sizes must be positive")
        if self.encoder_mode not in ("scratch", "frozen", "fine_tune"):
            raise ValueError(f"unknown encoder_mode {self.encoder_mode!r}")
        if self.encoder_mode in ("frozen", "fine_tune") and \
                not self.source_checkpoint:
            raise ValueError(f"{self.encoder_mode} needs a source_checkpoint")
        if self.label_kind not in ("ascii", "rpn"):
            raise ValueError(f"unknown label_kind {self.label_kind!r}")

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Schedule: initial rate halved every lr_halve_every epochs."""
    return config.lr * 0.5 ** (epoch // config.lr_halve_every)


class Adam:
    """Adam over a named parameter dict; frozen names are skipped."""

    def __init__(self, params: dict[str, Tensor], config: TrainConfig,
                 skip_prefix: Optional[str] = None):
        self.params = params
        self.beta1, self.beta2 = config.beta1, config.beta2
        self.eps = config.adam_eps
        self.names = [k for k in sorted(params)
                      if not (skip_prefix and k.startswith(skip_prefix))]
        self.m = {k: np.zeros_like(params[k].data) for k in self.names}
        self.v = {k: np.zeros_like(params[k].data) for k in self.names}
        self.steps = 0

    def step(self, lr: float):
        self.steps += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.steps
        bias2 = 1.0 - b2 ** self.steps
        for name in self.names:
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict:
        return {"step": self.steps, "m": self.m, "v": self.v}


# -- data preparation ------------------------------------------------------------


def label_tokens(sample: strokes.ExpressionSample, label_kind: str) -> list[str]:
    """Ground-truth decoder tokens, without bos/eos."""
    if label_kind == "ascii":
        return list(sample.ascii_label)
    return vocab.strip_specials(sample.rpn_label)


@dataclass
class Batchable:
    """Pre-tokenized split ready for batching."""

    x: np.ndarray          # (N, n, d_f) float32
    mask: np.ndarray       # (N, n) bool
    y_in: np.ndarray       # (N, T) int64, bos-led, pad-filled
    y_tgt: np.ndarray      # (N, T) int64, eos-terminated, pad-filled
    refs: list[list[str]]  # stripped reference tokens per sample


def prepare(samples: Sequence[strokes.ExpressionSample], config: ModelConfig,
            label_kind: str) -> Batchable:
    if not samples:
        raise ValueError("empty split")
    xs, masks, seqs, refs = [], [], [], []
    for sample in samples:
        tok = strokes.tokenize(sample, config.n)
        xs.append(tok.tokens)
        masks.append(tok.mask)
        body = label_tokens(sample, label_kind)
        seq = [vocab.BOS_ID] + vocab.encode(body) + [vocab.EOS_ID]
        if len(seq) > config.m + 1:
            raise ValueError(f"label of {len(seq)} tokens exceeds m={config.m}")
        seqs.append(seq)
        refs.append(body)
    width = max(len(s) for s in seqs) - 1
    y_in = np.full((len(seqs), width), vocab.PAD_ID, dtype=np.int64)
    y_tgt = np.full((len(seqs), width), vocab.PAD_ID, dtype=np.int64)
    for i, seq in enumerate(seqs):
        y_in[i, :len(seq) - 1] = seq[:-1]
        y_tgt[i, :len(seq) - 1] = seq[1:]
    return Batchable(x=np.stack(xs), mask=np.stack(masks),
                     y_in=y_in, y_tgt=y_tgt, refs=refs)


def _forward_loss(params, config: ModelConfig, data: Batchable,
                  idx: np.ndarray, rng=None) -> Tensor:
    x, mask = data.x[idx], data.mask[idx]
    y_in, y_tgt = data.y_in[idx], data.y_tgt[idx]
    z, _ = model.encode(params, config, x, mask, rng=rng)
    logits, _ = model.decode_teacher_forced(params, config, z, mask, y_in,
                                            rng=rng)
    batch, t, v = logits.shape
    return ag.cross_entropy(ag.reshape(logits, (batch * t, v)),
                            y_tgt.reshape(-1), ignore_index=vocab.PAD_ID)


def _split_xel(params, config, data: Batchable, batch_size=256) -> float:
    total, count = 0.0, 0
    with ag.no_grad():
        for start in range(0, len(data.x), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data.x)))
            kept = int((data.y_tgt[idx] != vocab.PAD_ID).sum())
            total += _forward_loss(params, config, data, idx).item() * kept
            count += kept
    return total / count


def decode_split(params, config, data: Batchable,
                 batch_size=256) -> list[list[str]]:
    """Greedy predictions (stripped token strings) for a whole split."""
    preds = []
    with ag.no_grad():
        for start in range(0, len(data.x), batch_size):
            stop = min(start + batch_size, len(data.x))
            z, _ = model.encode(params, config, data.x[start:stop],
                                data.mask[start:stop])
            for ids in model.batched_greedy_decode(params, config, z,
                                                   data.mask[start:stop]):
                preds.append(vocab.strip_specials(vocab.decode(ids)))
    return preds


def _split_la(params, config, data: Batchable) -> float:
    preds = decode_split(params, config, data)
    return float(np.mean([metrics.la(r, p) for r, p in zip(data.refs, preds)]))


# -- training ----------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    config: ModelConfig
    train_config: TrainConfig
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_la: float = 0.0
    adam: Optional[Adam] = None


def _clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(p.data.copy(), requires_grad=True)
            for k, p in params.items()}


def _initial_params(config: ModelConfig, train_config: TrainConfig,
                    rng) -> dict[str, Tensor]:
    if train_config.encoder_mode == "scratch":
        return model.init_params(config, rng)
    source = model.load_checkpoint(train_config.source_checkpoint)
    if train_config.encoder_mode == "fine_tune":
        return source["params"]
    params = model.init_params(config, rng)
    for name, tensor in source["params"].items():
        if name.startswith(ENCODER_PREFIX):
            params[name] = Tensor(tensor.data.copy(), requires_grad=True)
    return params


def train(dataset_path: str, config: ModelConfig, train_config: TrainConfig,
          out_dir: Optional[str] = None,
          splits: tuple[Optional[str], Optional[str]] = ("train", "val")) -> TrainResult:
    """Train on a dataset file; returns the best-validation-LA parameters.

    splits names the (training, validation) dataset splits; None selects
    every sample, which an overfitting harness uses to validate on its own
    training set. Epoch records {epoch, lr, train_xel, val_xel, val_la} are
    appended to out_dir/epoch_log.jsonl when out_dir is given, and the best
    checkpoint is written there.
    """
    train_data = prepare(strokes.load_dataset(dataset_path, splits[0]),
                         config, train_config.label_kind)
    val_data = prepare(strokes.load_dataset(dataset_path, splits[1]),
                       config, train_config.label_kind)
    rng = np.random.default_rng(train_config.seed)
    params = _initial_params(config, train_config, rng)
    skip = ENCODER_PREFIX if train_config.encoder_mode == "frozen" else None
    adam = Adam(params, train_config, skip_prefix=skip)
    result = TrainResult(params=params, config=config,
                         train_config=train_config, adam=adam)
    log_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "epoch_log.jsonl"), "w")
    best = _clone_params(params)
    since_best = 0
    n_train = len(train_data.x)
    try:
        for epoch in range(train_config.epochs):
            lr = lr_at(train_config, epoch)
            order = rng.permutation(n_train)
            losses = []
            for start in range(0, n_train, train_config.batch_size):
                idx = order[start:start + train_config.batch_size]
                adam.zero_grad()
                loss = _forward_loss(params, config, train_data, idx, rng=rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss {value} at epoch {epoch}, "
                        f"step {start // train_config.batch_size}")
                loss.backward()
                adam.step(lr)
                losses.append(value)
            record = {"epoch": epoch, "lr": lr,
                      "train_xel": float(np.mean(losses)),
                      "val_xel": _split_xel(params, config, val_data),
                      "val_la": _split_la(params, config, val_data)}
            result.log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if record["val_la"] > result.best_val_la or result.best_epoch < 0:
                result.best_val_la = record["val_la"]
                result.best_epoch = epoch
                best = _clone_params(params)
                since_best = 0
            else:
                since_best += 1
            if (train_config.target_val_la is not None and
                    record["val_la"] >= train_config.target_val_la):
                break
            if (train_config.patience is not None and
                    since_best > train_config.patience):
                break
    finally:
        if log_fh:
            log_fh.close()
    result.params = best
    if out_dir:
        meta = {"label_kind": train_config.label_kind,
                "dataset": os.path.basename(dataset_path),
                "encoder_mode": train_config.encoder_mode,
                "best_val_la": result.best_val_la}
        model.save_checkpoint(os.path.join(out_dir, "best.ckpt"), best,
                              config, epoch=result.best_epoch, meta=meta,
                              rng_state=rng.bit_generator.state)
    return result


# -- evaluation ---------------------------------------------------------------------


@dataclass
class EvalReport:
    xel: float
    la: float
    cer: float
    rar: Optional[tuple[float, float]]
    confusion: np.ndarray          # (V, V): mean softmax row per true token
    confusion_counts: np.ndarray   # (V,): occurrences of each true token
    records: list[dict]

    def to_dict(self) -> dict:
        return {
            "xel": self.xel,
            "la": self.la,
            "cer": self.cer,
            "rar": list(self.rar) if self.rar else None,
            "confusion": self.confusion.tolist(),
            "confusion_counts": self.confusion_counts.tolist(),
            "records": self.records,
        }


def confusion_csv(report: EvalReport) -> str:
    lines = ["token," + ",".join(vocab.TOKENS)]
    for i, tok in enumerate(vocab.TOKENS):
        row = ",".join(f"{x:.6f}" for x in report.confusion[i])
        lines.append(f"{tok},{row}")
    return "\n".join(lines) + "\n"


def evaluate(params: dict, config: ModelConfig,
             samples: Sequence[strokes.ExpressionSample], label_kind: str,
             keep_records: bool = True) -> EvalReport:
    """Greedy-decode every sample and aggregate XEL, LA, CER, RAR and the
    teacher-forced mean-softmax confusion matrix."""
    data = prepare(samples, config, label_kind)
    v = vocab.VOCAB_SIZE
    confusion = np.zeros((v, v), dtype=np.float64)
    counts = np.zeros(v, dtype=np.int64)
    total_loss, total_kept = 0.0, 0
    with ag.no_grad():
        for start in range(0, len(data.x), 256):
            idx = np.arange(start, min(start + 256, len(data.x)))
            x, mask = data.x[idx], data.mask[idx]
            z, _ = model.encode(params, config, x, mask)
            logits, _ = model.decode_teacher_forced(params, config, z, mask,
                                                    data.y_in[idx])
            flat = logits.data.reshape(-1, v)
            targets = data.y_tgt[idx].reshape(-1)
            kept = targets != vocab.PAD_ID
            probs = ag.softmax_probs(flat[kept])
            np.add.at(confusion, targets[kept], probs)
            np.add.at(counts, targets[kept], 1)
            logp = np.log(probs[np.arange(len(probs)),
                                targets[kept]].clip(1e-30))
            total_loss -= float(logp.sum())
            total_kept += int(kept.sum())
    confusion[counts > 0] /= counts[counts > 0, None]

    preds = decode_split(params, config, data)
    las = [metrics.la(r, p) for r, p in zip(data.refs, preds)]
    lds = [metrics.levenshtein(r, p) for r, p in zip(data.refs, preds)]
    ref_len = sum(len(r) for r in data.refs)
    report = EvalReport(
        xel=total_loss / total_kept,
        la=float(np.mean(las)),
        cer=float(sum(lds) / ref_len),
        rar=grammar.rar(preds) if label_kind == "rpn" else None,
        confusion=confusion,
        confusion_counts=counts,
        records=[],
    )
    if keep_records:
        report.records = [
            {"reference": " ".join(r), "prediction": " ".join(p),
             "ld": ld, "la": round(s, 6)}
            for r, p, ld, s in zip(data.refs, preds, lds, las)]
    return report


# -- ablation harness -----------------------------------------------------------------

_TARGET_SYMBOLS = {"equals": ("=",), "closing_bracket": (")",),
                   "operator": vocab.OPERATORS}


def _ablation_glyph(sample: strokes.ExpressionSample,
                    target: str) -> Optional[int]:
    """Index of the last glyph matching the target, or None."""
    wanted = _TARGET_SYMBOLS[target]
    for i in range(len(sample.glyphs) - 1, -1, -1):
        if sample.glyphs[i].symbol in wanted:
            return i
    return None


def _rpn_token_for_glyph(sample: strokes.ExpressionSample,
                         glyph_idx: int) -> int:
    """Position in the rpn label of the token written as glyph glyph_idx
    (operators and '=' only)."""
    symbol = sample.glyphs[glyph_idx].symbol
    if symbol == "=":
        return len(sample.rpn_label) - 2
    tree = grammar.parse_infix(list(sample.ascii_label))
    infix_nodes: list = []
    rpn_nodes: list = []

    def walk_infix(node):
        if isinstance(node, grammar.Numeral):
            infix_nodes.extend([None] * len(node.text))
            return
        if node.bracketed:
            infix_nodes.append(None)
        walk_infix(node.left)
        infix_nodes.append(id(node))
        walk_infix(node.right)
        if node.bracketed:
            infix_nodes.append(None)

    def walk_rpn(node):
        if isinstance(node, grammar.Numeral):
            rpn_nodes.extend([None] * (len(node.text) + 1))
            return
        walk_rpn(node.left)
        walk_rpn(node.right)
        rpn_nodes.append(id(node))

    walk_infix(tree)
    walk_rpn(tree)
    node_id = infix_nodes[glyph_idx]
    if node_id is None:
        raise ValueError(f"glyph {glyph_idx} is not an operator")
    return 1 + rpn_nodes.index(node_id)  # +1 for bos


def _ablated_reference(sample: strokes.ExpressionSample, glyph_idx: int,
                       label_kind: str) -> list[str]:
    """Ground truth of the ablated input: the label with the elided
    glyph's token removed."""
    if label_kind == "ascii":
        toks = list(sample.ascii_label)
        del toks[glyph_idx]
        return toks
    pos = _rpn_token_for_glyph(sample, glyph_idx)
    toks = list(sample.rpn_label)
    del toks[pos]
    return vocab.strip_specials(toks)


def _prediction_valid(pred: list[str], label_kind: str) -> bool:
    if label_kind == "rpn":
        return grammar.count_violations(pred) == 0
    depth = 0
    for tok in pred:
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


def _contains_restored(pred: list[str], target: str,
                       ablated_ref: list[str]) -> bool:
    if target == "equals":
        return "=" in pred
    if target == "closing_bracket":
        return pred.count(")") >= ablated_ref.count(")") + 1
    ops_in_ref = sum(1 for t in ablated_ref if t in vocab.OPERATORS)
    return sum(1 for t in pred if t in vocab.OPERATORS) >= ops_in_ref + 1


def ablate_and_score(params: dict, config: ModelConfig,
                     samples: Sequence[strokes.ExpressionSample],
                     target: str, label_kind: str) -> dict:
    """Elide one glyph from each sample's input and score the decode.

    LD is reported against the ablated ground truth (the label of what
    remains written), matching the reference robustness protocol, and against
    the original label for reference. Samples without the target glyph are
    skipped but counted.
    """
    if target not in _TARGET_SYMBOLS:
        raise ValueError(f"unknown ablation target {target!r}")
    if target == "closing_bracket" and label_kind == "rpn":
        raise ValueError("closing-bracket ablation applies to the glyph "
                         "task only; postfix output has no brackets")
    scored_samples = []
    skipped = 0
    for sample in samples:
        glyph_idx = _ablation_glyph(sample, target)
        if glyph_idx is None:
            skipped += 1
            continue
        scored_samples.append(
            (sample, glyph_idx,
             strokes.tokenize(sample, config.n, ablate_glyph=glyph_idx)))

    preds: list[list[str]] = []
    with ag.no_grad():
        for start in range(0, len(scored_samples), 256):
            chunk = scored_samples[start:start + 256]
            x, mask = model.stack_inputs([tok for _, _, tok in chunk])
            z, _ = model.encode(params, config, x, mask)
            for ids in model.batched_greedy_decode(params, config, z, mask):
                preds.append(vocab.strip_specials(vocab.decode(ids)))

    rows = []
    for (sample, glyph_idx, _), pred in zip(scored_samples, preds):
        original_ref = label_tokens(sample, label_kind)
        ablated_ref = _ablated_reference(sample, glyph_idx, label_kind)
        rows.append({
            "ascii": sample.ascii_label,
            "ablated_glyph": sample.glyphs[glyph_idx].symbol,
            "reference_ablated": " ".join(ablated_ref),
            "reference_original": " ".join(original_ref),
            "prediction": " ".join(pred),
            "ld_ablated": metrics.levenshtein(ablated_ref, pred),
            "ld_original": metrics.levenshtein(original_ref, pred),
            "restored": _contains_restored(pred, target, ablated_ref),
            "valid": _prediction_valid(pred, label_kind),
        })
    scored = len(rows)
    return {
        "target": target,
        "n_scored": scored,
        "n_skipped": skipped,
        "restored_fraction": (sum(r["restored"] for r in rows) / scored
                              if scored else 0.0),
        "valid_fraction": (sum(r["valid"] for r in rows) / scored
                           if scored else 0.0),
        "mean_ld_ablated": (float(np.mean([r["ld_ablated"] for r in rows]))
                            if scored else 0.0),
        "mean_ld_original": (float(np.mean([r["ld_original"] for r in rows]))
                             if scored else 0.0),
        "rows": rows,
    }


# -- attention alignment ---------------------------------------------------------------


def numeral_token_spans(sample: strokes.ExpressionSample) -> list[list[int]]:
    """Encoder token positions (bos offset included) of each written
    numeral, in writing order."""
    spans = []
    current: list[int] = []
    for glyph in sample.glyphs:
        if glyph.symbol.isdigit() or glyph.symbol == ".":
            current.extend(i + 1 for i in glyph.stroke_indices)
        elif current:
            spans.append(current)
            current = []
    if current:
        spans.append(current)
    return spans


def eon_attention_alignment(params: dict, config: ModelConfig,
                            samples: Sequence[strokes.ExpressionSample],
                            max_samples: int = 200) -> dict:
    """How often the top cross-attention input of an emitted eon falls in
    the strokes of the numeral it closes, per (layer, head); mirrors the
    numeral-segmentation behaviour seen in attention plots.

    Only samples decoded exactly right are measured (alignment is
    ill-defined otherwise). Returns the best head and its hit rate.
    """
    hits = np.zeros((config.layers_dec, config.heads_dec), dtype=np.int64)
    total = 0
    used = 0
    for sample in samples[:max_samples]:
        ref = sample.rpn_label
        tok = strokes.tokenize(sample, config.n)
        x, mask = model.stack_inputs([tok])
        with ag.no_grad():
            z, _ = model.encode(params, config, x, mask)
        ids, cross = model.greedy_decode(params, config, z, mask)
        if vocab.decode(ids) != ref:
            continue
        used += 1
        spans = numeral_token_spans(sample)
        ordinal = 0
        for row, tok_id in enumerate(ids[1:]):
            if tok_id != vocab.EON_ID:
                continue
            span = set(spans[ordinal])
            ordinal += 1
            total += 1
            top = cross[:, :, row, :].argmax(axis=-1)
            for l in range(config.layers_dec):
                for h in range(config.heads_dec):
                    if int(top[l, h]) in span:
                        hits[l, h] += 1
    if total == 0:
        return {"samples_used": 0, "eons": 0, "best": None}
    rates = hits / total
    l, h = np.unravel_index(np.argmax(rates), rates.shape)
    return {"samples_used": used, "eons": total,
            "best": {"layer": int(l), "head": int(h),
                     "hit_rate": float(rates[l, h])},
            "rates": rates.tolist()}
