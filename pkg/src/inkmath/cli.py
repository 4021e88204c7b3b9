"""Command-line entry points for the full pipeline.

Every subcommand reads json configs whose keys mirror the config dataclass
fields, writes machine-readable json to stdout (or a file), and exits 0 on
success, 2 on a bad config, 3 on a missing or unreadable checkpoint.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BAD_CONFIG = 2
EXIT_BAD_CHECKPOINT = 3


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _emit(payload, out: str | None):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_gen_data(args) -> int:
    from . import grammar, strokes

    cfg = _load_json(args.config)
    gen = grammar.GenConfig.from_dict(cfg["gen"])
    manifest = strokes.make_dataset(
        count=cfg["count"], config=gen, n=cfg["n"], seed=cfg["seed"],
        out_path=args.out, num_writers=cfg.get("num_writers"))
    _emit(manifest, None)
    return EXIT_OK


def cmd_train(args) -> int:
    from . import model, training

    cfg = _load_json(args.config)
    model_config = model.resolve_config(cfg["model"])
    train_config = training.TrainConfig.from_dict(cfg["train"])
    result = training.train(cfg["dataset"], model_config, train_config,
                            out_dir=cfg.get("out_dir"))
    _emit({"best_epoch": result.best_epoch,
           "best_val_la": result.best_val_la,
           "epochs_run": len(result.log),
           "final": result.log[-1] if result.log else None}, None)
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import model, strokes, training

    bundle = model.load_checkpoint(args.checkpoint)
    samples = strokes.load_dataset(args.dataset, args.split)
    label_kind = args.label_kind or bundle["meta"].get("label_kind", "ascii")
    report = training.evaluate(bundle["params"], bundle["config"], samples,
                               label_kind, keep_records=args.records)
    payload = report.to_dict()
    if not args.records:
        payload.pop("records")
    _emit(payload, args.out)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(training.confusion_csv(report))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from . import model, strokes, training

    bundle = model.load_checkpoint(args.checkpoint)
    samples = strokes.load_dataset(args.dataset, args.split)
    label_kind = args.label_kind or bundle["meta"].get("label_kind", "ascii")
    report = training.ablate_and_score(bundle["params"], bundle["config"],
                                       samples, args.target, label_kind)
    if not args.rows:
        report.pop("rows")
    _emit(report, args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    from . import model, service

    bundle = model.load_checkpoint(args.checkpoint)
    sample = _load_json(args.sample)
    response = service.recognize_strokes(
        bundle["params"], bundle["config"], sample["strokes"],
        bundle["meta"].get("label_kind", "rpn"))
    if not args.attention:
        response.pop("attention")
    _emit(response, args.out)
    return EXIT_OK


def cmd_export_attention(args) -> int:
    from . import model, strokes

    bundle = model.load_checkpoint(args.checkpoint)
    samples = strokes.load_dataset(args.dataset, args.split)
    if not 0 <= args.index < len(samples):
        raise ValueError(f"sample index {args.index} out of range "
                         f"(split has {len(samples)})")
    sample = samples[args.index]
    tok = strokes.tokenize(sample, bundle["config"].n)
    report = model.export_attention(bundle["params"], bundle["config"], tok,
                                    model.input_glyph_labels(sample))
    report["ascii"] = sample.ascii_label
    _emit(report, args.out)
    return EXIT_OK


def cmd_count_params(args) -> int:
    from . import model

    source = args.config
    if source.endswith(".json"):
        config = model.resolve_config(_load_json(source))
    else:
        config = model.resolve_config(source)
    _emit(model.count_params(config), args.out)
    return EXIT_OK


def cmd_serve(args) -> int:
    from . import model, service

    model.load_checkpoint(args.checkpoint)  # fail fast with exit 3
    service.serve(args.checkpoint, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inkmath",
        description="online handwritten expression recognition pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("config", help="json with count, n, seed, gen{...}")
    p.add_argument("out", help="output .jsonl path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("config", help="json with dataset, model, train, out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--label-kind", dest="label_kind",
                   choices=["ascii", "rpn"])
    p.add_argument("--records", action="store_true")
    p.add_argument("--out")
    p.add_argument("--csv", help="write the confusion matrix as csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="glyph-ablation robustness study")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--target", required=True,
                   choices=["equals", "closing_bracket", "operator"])
    p.add_argument("--label-kind", dest="label_kind",
                   choices=["ascii", "rpn"])
    p.add_argument("--rows", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="recognize strokes from a json file")
    p.add_argument("checkpoint")
    p.add_argument("sample", help='json file: {"strokes": [[[x,y,t],...],...]}')
    p.add_argument("--attention", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("export-attention",
                       help="cross-attention report for a dataset sample")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("count-params",
                       help="parameter counts for a preset or config json")
    p.add_argument("config", help="preset name (V1..V11) or json path")
    p.add_argument("--out")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("serve", help="run the http inference service")
    p.add_argument("checkpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    from . import model

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except model.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
