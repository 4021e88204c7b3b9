"""Synthetic online handwriting: strokes for expressions, tokenization,
dataset files.

Each vocabulary glyph has one or more polyline templates in a unit cell
(y grows downward, as on a touch panel). A writer style applies slant,
scale, spacing and noise; an expression lays its glyphs out left to right
and is renormalized to the unit square. Strokes become fixed-width encoder
tokens of interleaved (x, y) pairs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import grammar, vocab

TOKEN_WIDTH = 128          # scalars per encoder token
MAX_POINTS = TOKEN_WIDTH // 2
BOS_FILL = -1.0
EOS_FILL = -2.0


class Touch(NamedTuple):
    """One sampled panel contact: normalized position plus milliseconds
    since the stroke started."""

    x: float
    y: float
    t: float


@dataclass
class Stroke:
    """Pen-down-to-pen-up point sequence; glyph_id indexes the owning glyph
    in the sample's glyph list."""

    points: np.ndarray      # (k, 3) float: x, y, t
    glyph_id: int = -1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("stroke points must be (k, 3) of x, y, t")
        if len(self.points) < 2:
            raise ValueError("a stroke needs at least 2 points")
        if not (np.diff(self.points[:, 2]) > 0).all():
            raise ValueError("stroke timestamps must be strictly increasing")

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    def touches(self) -> list[Touch]:
        return [Touch(*p) for p in self.points]


@dataclass
class GlyphSpan:
    symbol: str
    stroke_indices: list[int]


@dataclass
class ExpressionSample:
    """One handwritten expression with its three ground-truth labels."""

    strokes: list[Stroke]
    glyphs: list[GlyphSpan]
    ascii_label: str
    rpn_label: list[str]
    value: Fraction
    value_decimal: str
    writer_id: str
    split: str = "train"

    def __post_init__(self):
        owners = [s.glyph_id for s in self.strokes]
        expected = [i for i, g in enumerate(self.glyphs)
                    for _ in g.stroke_indices]
        if owners != expected:
            raise ValueError("stroke order must follow glyph order")
        if "".join(g.symbol for g in self.glyphs) != self.ascii_label:
            raise ValueError("glyph symbols disagree with the ascii label")
        grammar.validate_rpn_label(self.rpn_label)
        if grammar.evaluate_rpn(self.rpn_label) != self.value:
            raise ValueError("rpn label does not evaluate to the stored value")


@dataclass
class TokenizedInput:
    """Fixed-length encoder input: n tokens of TOKEN_WIDTH scalars plus a
    validity mask (bos + strokes + eos true, pad false)."""

    tokens: np.ndarray      # (n, TOKEN_WIDTH) float32
    mask: np.ndarray        # (n,) bool

    @property
    def n(self) -> int:
        return len(self.mask)


@dataclass(frozen=True)
class WriterStyle:
    """Per-writer rendering parameters, bounded so glyphs stay inside
    their cells."""

    writer_id: str
    slant: float            # radians; positive leans the glyph top rightward
    scale: float
    scale_jitter: float     # per-glyph relative size wobble
    spacing: float
    noise: float            # gaussian sigma in cell units
    speed_seed: int

    @staticmethod
    def from_seed(writer_id: str, seed: int) -> "WriterStyle":
        rng = np.random.default_rng(seed)
        return WriterStyle(
            writer_id=writer_id,
            slant=float(rng.uniform(-0.22, 0.22)),
            scale=float(rng.uniform(0.82, 1.12)),
            scale_jitter=float(rng.uniform(0.02, 0.07)),
            spacing=float(rng.uniform(0.85, 1.2)),
            noise=float(rng.uniform(0.004, 0.016)),
            speed_seed=int(rng.integers(0, 2**31)),
        )


IDENTITY_STYLE = WriterStyle("identity", 0.0, 1.0, 0.0, 1.0, 0.0, 0)


# -- glyph templates -----------------------------------------------------------

def _arc(cx, cy, rx, ry, deg0, deg1, steps=10):
    ang = np.radians(np.linspace(deg0, deg1, steps))
    return np.stack([cx + rx * np.cos(ang), cy + ry * np.sin(ang)], axis=1)


def _pts(*pairs):
    return np.array(pairs, dtype=np.float64)


def _build_templates() -> dict[str, list[np.ndarray]]:
    t: dict[str, list[np.ndarray]] = {}
    t["0"] = [_arc(0.5, 0.5, 0.21, 0.34, -90, 270, 14)]
    t["1"] = [_pts((0.38, 0.28), (0.52, 0.16), (0.52, 0.85))]
    t["2"] = [np.concatenate([_arc(0.5, 0.32, 0.2, 0.17, 180, 340, 7),
                              _pts((0.66, 0.44), (0.44, 0.64), (0.3, 0.83),
                                   (0.72, 0.84))])]
    t["3"] = [np.concatenate([_arc(0.47, 0.3, 0.18, 0.15, 160, 400, 7),
                              _arc(0.49, 0.66, 0.2, 0.18, -80, 170, 8)])]
    t["4"] = [_pts((0.58, 0.16), (0.3, 0.58), (0.74, 0.58)),
              _pts((0.62, 0.34), (0.62, 0.86))]
    t["5"] = [np.concatenate([_pts((0.64, 0.17), (0.38, 0.17), (0.35, 0.45)),
                              _arc(0.5, 0.64, 0.19, 0.2, -80, 160, 8)])]
    t["6"] = [np.concatenate([_pts((0.6, 0.15), (0.42, 0.36), (0.34, 0.6)),
                              _arc(0.48, 0.68, 0.15, 0.16, 160, 460, 10)])]
    t["7"] = [_pts((0.28, 0.18), (0.72, 0.18), (0.44, 0.85))]
    t["8"] = [np.concatenate([_arc(0.5, 0.31, 0.16, 0.15, -90, 200, 8),
                              _arc(0.5, 0.66, 0.19, 0.18, -70, 250, 10),
                              _arc(0.5, 0.31, 0.16, 0.15, 150, 270, 5)])]
    t["9"] = [np.concatenate([_arc(0.48, 0.34, 0.17, 0.17, 0, 360, 10),
                              _pts((0.65, 0.38), (0.6, 0.85))])]
    t["."] = [_pts((0.47, 0.78), (0.52, 0.82), (0.48, 0.85))]
    t["+"] = [_pts((0.24, 0.5), (0.76, 0.5)),
              _pts((0.5, 0.26), (0.5, 0.74))]
    t["-"] = [_pts((0.24, 0.5), (0.76, 0.5))]
    t["*"] = [_pts((0.28, 0.28), (0.72, 0.72)),
              _pts((0.72, 0.28), (0.28, 0.72))]
    t["/"] = [_pts((0.24, 0.5), (0.76, 0.5)),
              _pts((0.48, 0.28), (0.53, 0.33)),
              _pts((0.48, 0.67), (0.53, 0.72))]
    t["="] = [_pts((0.24, 0.42), (0.76, 0.42)),
              _pts((0.24, 0.6), (0.76, 0.6))]
    t["("] = [_pts((0.6, 0.14), (0.46, 0.34), (0.42, 0.55), (0.47, 0.75),
                   (0.6, 0.88))]
    t[")"] = [_pts((0.4, 0.14), (0.54, 0.34), (0.58, 0.55), (0.53, 0.75),
                   (0.4, 0.88))]
    return t


TEMPLATES = _build_templates()

# advance width of each glyph cell, relative to cell height
_WIDTHS = {".": 0.3, "(": 0.45, ")": 0.45, "1": 0.45, "-": 0.7, "+": 0.7,
           "*": 0.7, "/": 0.7, "=": 0.7}
_DEFAULT_WIDTH = 0.62


def glyph_width(symbol: str) -> float:
    return _WIDTHS.get(symbol, _DEFAULT_WIDTH)


def _densify(poly: np.ndarray, spacing: float = 0.045) -> np.ndarray:
    """Linear interpolation along each segment at roughly uniform spacing;
    the original vertices stay in place so corners survive."""
    out = [poly[0]]
    for a, b in zip(poly[:-1], poly[1:]):
        steps = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
        for s in range(1, steps + 1):
            out.append(a + (b - a) * (s / steps))
    return np.array(out)


def resample_polyline(poly: np.ndarray, count: int) -> np.ndarray:
    """Uniform arc-length resampling to exactly count points."""
    poly = np.asarray(poly, dtype=np.float64)
    if count < 2:
        raise ValueError("resampling needs at least 2 points")
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0:
        return np.repeat(poly[:1], count, axis=0)
    target = np.linspace(0.0, cum[-1], count)
    x = np.interp(target, cum, poly[:, 0])
    y = np.interp(target, cum, poly[:, 1])
    return np.stack([x, y], axis=1)


def polyline_length(poly: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(np.asarray(poly)[:, :2], axis=0),
                                axis=1).sum())


# milliseconds of pen travel per unit of arc length
_SPEED_MS = 900.0


def _timestamps(xy: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    dt = seg * _SPEED_MS * rng.uniform(0.75, 1.3)
    dt = np.maximum(dt * rng.uniform(0.85, 1.15, size=len(seg)), 0.4)
    return np.concatenate([[0.0], np.cumsum(dt)])


def synth_glyph(symbol: str, style: WriterStyle,
                rng: np.random.Generator) -> list[Stroke]:
    """Strokes for one glyph in its unit cell, in canonical order."""
    if symbol not in TEMPLATES:
        raise ValueError(f"unknown glyph symbol {symbol!r}")
    shear = math.tan(style.slant)
    size = style.scale * (1.0 + rng.uniform(-style.scale_jitter,
                                            style.scale_jitter))
    strokes = []
    for poly in TEMPLATES[symbol]:
        pts = _densify(poly).copy()
        pts = (pts - 0.5) * size + 0.5
        pts[:, 0] += (0.5 - pts[:, 1]) * shear
        if style.noise > 0:
            pts += rng.normal(0.0, style.noise, pts.shape)
        pts = np.clip(pts, 0.0, 1.0)
        t = _timestamps(pts, rng)
        strokes.append(Stroke(np.column_stack([pts, t])))
    return strokes


class StrokeBudgetError(ValueError):
    """Expression needs more encoder tokens than the model admits."""


def synth_expression(tree: grammar.ExprTree, style: WriterStyle,
                     rng: np.random.Generator,
                     n: Optional[int] = None) -> ExpressionSample:
    """Handwrite a whole expression: glyphs laid out left to right with
    style spacing and baseline jitter, then renormalized to the unit square
    preserving aspect ratio. n, when given, caps strokes at n - 2."""
    glyph_tokens = grammar.to_infix(tree)
    strokes: list[Stroke] = []
    glyphs: list[GlyphSpan] = []
    x_cursor = 0.0
    for symbol in glyph_tokens:
        width = glyph_width(symbol) * style.spacing * rng.uniform(0.92, 1.1)
        baseline = rng.normal(0.0, 0.03)
        span = GlyphSpan(symbol, [])
        for stroke in synth_glyph(symbol, style, rng):
            pts = stroke.points.copy()
            pts[:, 0] = x_cursor + pts[:, 0] * width
            pts[:, 1] += baseline
            span.stroke_indices.append(len(strokes))
            strokes.append(Stroke(pts, glyph_id=len(glyphs)))
        glyphs.append(span)
        x_cursor += width * rng.uniform(1.02, 1.12)
    if n is not None and len(strokes) > n - 2:
        raise StrokeBudgetError(
            f"{len(strokes)} strokes exceed the budget of {n - 2}")

    all_xy = np.concatenate([s.xy for s in strokes])
    lo = all_xy.min(axis=0)
    extent = float(max((all_xy.max(axis=0) - lo).max(), 1e-9))
    for stroke in strokes:
        stroke.points[:, :2] = (stroke.points[:, :2] - lo) / extent

    value = grammar.evaluate(tree)
    return ExpressionSample(
        strokes=strokes,
        glyphs=glyphs,
        ascii_label="".join(glyph_tokens),
        rpn_label=grammar.to_rpn(tree),
        value=value,
        value_decimal=grammar.to_decimal(value),
        writer_id=style.writer_id,
    )


# -- tokenization ---------------------------------------------------------------

def tokenize_strokes(stroke_xy: Sequence[np.ndarray], n: int) -> TokenizedInput:
    """Encoder tokens for raw stroke polylines (already in [0, 1]).

    Each stroke is arc-length-resampled down to MAX_POINTS when longer,
    kept as-is when shorter, interleaved x1,y1,x2,y2,... and zero-padded to
    TOKEN_WIDTH. Token 0 is bos (all -1), the token after the last stroke
    is eos (all -2), the rest is zero pad with mask False.
    """
    if len(stroke_xy) + 2 > n:
        raise StrokeBudgetError(
            f"{len(stroke_xy)} strokes do not fit in {n} tokens")
    tokens = np.zeros((n, TOKEN_WIDTH), dtype=np.float32)
    mask = np.zeros(n, dtype=bool)
    tokens[0] = BOS_FILL
    mask[0] = True
    for i, xy in enumerate(stroke_xy, start=1):
        xy = np.asarray(xy, dtype=np.float64)[:, :2]
        if len(xy) > MAX_POINTS:
            xy = resample_polyline(xy, MAX_POINTS)
        tokens[i, :2 * len(xy)] = xy.astype(np.float32).reshape(-1)
        mask[i] = True
    tokens[len(stroke_xy) + 1] = EOS_FILL
    mask[len(stroke_xy) + 1] = True
    return TokenizedInput(tokens=tokens, mask=mask)


def tokenize(sample: ExpressionSample, n: int,
             ablate_glyph: Optional[int] = None) -> TokenizedInput:
    """Tokenize a sample, optionally eliding one glyph's strokes first."""
    strokes = sample.strokes
    if ablate_glyph is not None:
        if not 0 <= ablate_glyph < len(sample.glyphs):
            raise ValueError(f"no glyph {ablate_glyph} in sample")
        keep = set(range(len(strokes))) - set(
            sample.glyphs[ablate_glyph].stroke_indices)
        strokes = [strokes[i] for i in sorted(keep)]
    return tokenize_strokes([s.xy for s in strokes], n)


# -- dataset files -----------------------------------------------------------------

def _split_writers(num_writers: int, rng: np.random.Generator) -> dict[str, str]:
    """Writers partitioned 60/20/20 before any sample is assigned."""
    ids = [f"w{idx:03d}" for idx in range(num_writers)]
    order = list(rng.permutation(num_writers))
    n_train = max(1, round(num_writers * 0.6))
    n_val = max(1, round(num_writers * 0.2))
    splits = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            splits[ids[idx]] = "train"
        elif rank < n_train + n_val:
            splits[ids[idx]] = "val"
        else:
            splits[ids[idx]] = "test"
    return splits


def _sample_record(sample: ExpressionSample) -> dict:
    return {
        "writer_id": sample.writer_id,
        "split": sample.split,
        "strokes": [[[round(float(x), 6), round(float(y), 6),
                      round(float(t), 2)] for x, y, t in s.points]
                    for s in sample.strokes],
        "glyphs": [{"symbol": g.symbol, "stroke_indices": g.stroke_indices}
                   for g in sample.glyphs],
        "ascii": sample.ascii_label,
        "rpn": sample.rpn_label,
        "value": {"fraction": f"{sample.value.numerator}/{sample.value.denominator}",
                  "decimal": sample.value_decimal},
    }


def _sample_from_record(rec: dict) -> ExpressionSample:
    glyphs = [GlyphSpan(g["symbol"], list(g["stroke_indices"]))
              for g in rec["glyphs"]]
    owner = {}
    for gi, g in enumerate(glyphs):
        for si in g.stroke_indices:
            owner[si] = gi
    strokes = [Stroke(np.asarray(pts, dtype=np.float64), glyph_id=owner[i])
               for i, pts in enumerate(rec["strokes"])]
    num, den = rec["value"]["fraction"].split("/")
    return ExpressionSample(
        strokes=strokes,
        glyphs=glyphs,
        ascii_label=rec["ascii"],
        rpn_label=list(rec["rpn"]),
        value=Fraction(int(num), int(den)),
        value_decimal=rec["value"]["decimal"],
        writer_id=rec["writer_id"],
        split=rec["split"],
    )


def _label_budget_ok(sample_ascii: str, rpn: list[str], m: int) -> bool:
    # teacher-forced sequences (label plus bos/eos) must fit the decoder
    return len(sample_ascii) + 2 <= m and len(rpn) <= m


def make_dataset(count: int, config: grammar.GenConfig, n: int, seed: int,
                 out_path: str, num_writers: Optional[int] = None) -> dict:
    """Generate, label and serialize a dataset; returns the manifest.

    Writers are split 60/20/20 up front and samples are dealt round-robin,
    so no writer style crosses splits. Deterministic for a given seed.
    """
    if count < 10:
        raise ValueError("dataset needs at least 10 samples")
    if num_writers is None:
        num_writers = int(min(60, max(10, count // 200)))
    if num_writers < 3:
        raise ValueError("need at least 3 writers for a 60/20/20 split")
    root = np.random.SeedSequence(seed)
    setup_ss, *sample_ss = root.spawn(count + 1)
    setup_rng = np.random.default_rng(setup_ss)
    splits = _split_writers(num_writers, setup_rng)
    styles = {wid: WriterStyle.from_seed(wid, int(s))
              for wid, s in zip(sorted(splits),
                                setup_rng.integers(0, 2**31, num_writers))}
    writer_ids = sorted(splits)
    m = n // 2

    split_counts = {"train": 0, "val": 0, "test": 0}
    sha = hashlib.sha256()
    with open(out_path, "w", encoding="utf-8") as fh:
        for i in range(count):
            rng = np.random.default_rng(sample_ss[i])
            wid = writer_ids[i % num_writers]
            for _ in range(200):
                tree = grammar.generate(config, rng)
                infix = grammar.to_infix(tree)
                rpn = grammar.to_rpn(tree)
                est_strokes = sum(len(TEMPLATES[g]) for g in infix)
                if est_strokes <= n - 2 and _label_budget_ok(
                        "".join(infix), rpn, m):
                    break
            else:
                raise RuntimeError("could not fit an expression in the "
                                   "token budget; shrink the generator config")
            sample = synth_expression(tree, styles[wid], rng, n=n)
            sample.split = splits[wid]
            split_counts[sample.split] += 1
            line = json.dumps(_sample_record(sample), separators=(",", ":"))
            fh.write(line + "\n")
            sha.update(line.encode())
            sha.update(b"\n")

    manifest = {
        "seed": seed,
        "count": count,
        "n": n,
        "num_writers": num_writers,
        "gen_config": {
            "max_ops": config.max_ops,
            "allow_brackets": config.allow_brackets,
            "int_digits": list(config.int_digits),
            "dec_digits": list(config.dec_digits),
        },
        "split_counts": split_counts,
        "writer_splits": {s: sorted(w for w, sp in splits.items() if sp == s)
                          for s in ("train", "val", "test")},
        "sha256": sha.hexdigest(),
    }
    with open(manifest_path(out_path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def manifest_path(dataset_path: str) -> str:
    return str(dataset_path) + ".manifest.json"


def load_dataset(path: str,
                 split: Optional[str] = None) -> list[ExpressionSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if split is None or rec["split"] == split:
                samples.append(_sample_from_record(rec))
    return samples


def load_manifest(path: str) -> dict:
    with open(manifest_path(path), encoding="utf-8") as fh:
        return json.load(fh)
