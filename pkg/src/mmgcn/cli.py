"""Command-line entry point: synth, train, eval, ablate, heatmap."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config_file, merge_config
from .data import CorpusError, SynthSpec, load_corpus, save_corpus, synthesize_corpus
from .evaluation import AblationGrid, run_ablation
from .graph import export_adjacency_heatmap
from .model import forward
from .training import CheckpointError, TrainingDiverged, evaluate, load_checkpoint, save_checkpoint, train

log = logging.getLogger("mmgcn")

REPORT_DIR_ENV = "MMGCN_REPORT_DIR"


class CLIError(Exception):
    pass


def _floats(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        key, _, val = part.partition("=")
        out[key.strip()] = float(val)
    return out


def _ints(text: str) -> dict[str, int]:
    return {k: int(v) for k, v in _floats(text).items()}


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and training (flags > --config file > built-in defaults)")
    g.add_argument("--config", help="JSON file of RunConfig values")
    g.add_argument("--layers", dest="num_layers", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--eta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--d-h", dest="d_h", type=int)
    g.add_argument("--d-s", dest="d_s", type=int)
    g.add_argument("--d-mlp", dest="d_mlp", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--l2", type=float)
    g.add_argument("--l2-mode", dest="l2_mode", choices=["squared", "norm"])
    g.add_argument("--loss", choices=["ce", "focal"])
    g.add_argument("--focal-gamma", dest="focal_gamma", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--val-fraction", dest="val_fraction", type=float)
    g.add_argument("--fusion", choices=["mmgcn", "early", "late", "gated"])
    g.add_argument("--modalities", help="subset of 'avt', e.g. 'at'")
    g.add_argument("--no-speaker", dest="speaker_embedding", action="store_const", const=False)
    g.add_argument("--max-speakers", dest="max_speakers", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--report-dir", dest="report_dir")


MODEL_KEYS = (
    "num_layers", "alpha", "eta", "gamma", "d_h", "d_s", "d_mlp", "dropout", "lr", "l2", "l2_mode", "loss",
    "focal_gamma", "epochs", "patience", "val_fraction", "fusion", "modalities", "speaker_embedding",
    "max_speakers", "seed", "report_dir",
)


def _config_from_args(args, **extra) -> RunConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {k: getattr(args, k, None) for k in MODEL_KEYS}
    flags.update(extra)
    return merge_config(file_values, flags).validate()


def _report_dir(cfg: RunConfig) -> Path:
    # an explicit flag or config value wins; the environment overrides the built-in default
    path = Path(cfg.report_dir or os.environ.get(REPORT_DIR_ENV) or "reports")
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    dims = {"a": 20, "v": 12, "t": 24}
    if args.dims:
        dims.update(_ints(args.dims))
    info = {"a": 0.6, "v": 0.3, "t": 0.9}
    if args.informativeness:
        info.update(_floats(args.informativeness))
    spec = SynthSpec(
        num_dialogues=args.dialogues,
        len_range=(args.min_len, args.max_len),
        num_classes=args.classes,
        max_speakers=args.max_speakers,
        dims=dims,
        informativeness=info,
        separation=args.separation,
        persistence=args.persistence,
        speaker_bias=args.speaker_bias,
        seed=args.seed,
    )
    corpus = synthesize_corpus(spec)
    save_corpus(corpus, args.output)
    print(json.dumps({"path": str(args.output), "dialogues": len(corpus.dialogues),
                      "utterances": corpus.num_utterances, "classes": list(corpus.class_names)}))
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args, corpus=args.corpus, checkpoint=args.checkpoint)
    corpus = load_corpus(args.corpus)

    def show(row):
        print(f"epoch {row['epoch']:4d}  loss {row['loss']:.4f}  val_f1 {row['val_f1']:.4f}", file=sys.stderr)

    params, report, spec = train(corpus, cfg, on_epoch=show)
    ckpt = Path(args.checkpoint or _report_dir(cfg) / "model.ckpt.json")
    save_checkpoint(ckpt, params, spec, corpus.class_names)
    out = Path(args.report) if args.report else _report_dir(cfg) / "run_report.json"
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    print(json.dumps({"checkpoint": str(ckpt), "report": str(out), "best_epoch": report.best_epoch,
                      "val_weighted_f1": report.val_weighted_f1, "fingerprint": report.fingerprint}))
    return 0


def cmd_eval(args) -> int:
    params, spec, classes = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus, expected_dims=spec.dims)
    if tuple(corpus.class_names) != tuple(classes):
        raise CLIError(f"class names differ: checkpoint {list(classes)}, corpus {list(corpus.class_names)}")
    if corpus.max_speakers > spec.max_speakers:
        raise CLIError(f"corpus allows {corpus.max_speakers} speakers, checkpoint supports {spec.max_speakers}")
    metrics = evaluate(corpus, params, spec)
    metrics.update(fingerprint=spec.config.fingerprint(), seed=spec.config.seed, config=spec.config.to_dict(),
                   class_names=list(classes))
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    corpus = load_corpus(args.corpus)
    values = [v.strip() for v in args.values.split(",")] if args.values else []
    grid = AblationGrid(args.axis, values, args.reference)
    seeds = [int(s) for s in args.seeds.split(",")]
    report = run_ablation(corpus, grid, seeds, cfg, args.split, args.split_seed, args.workers)
    out = Path(args.output) if args.output else _report_dir(cfg) / f"ablation_{grid.axis}.json"
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.table())
    print(f"report written to {out}", file=sys.stderr)
    return 0 if not any(c.get("error") for c in report.cells.values()) else 1


def cmd_heatmap(args) -> int:
    params, spec, _ = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus, expected_dims=spec.dims)
    try:
        dialogue = corpus.dialogue(args.dialogue) if args.dialogue else corpus.dialogues[0]
    except KeyError as exc:
        raise CLIError(str(exc.args[0])) from None
    trace = forward(spec, dialogue, params, training=False)
    if not 0 <= args.utterance < len(dialogue):
        raise CLIError(f"utterance index {args.utterance} out of range for dialogue {dialogue.id!r} "
                       f"with {len(dialogue)} utterances")
    parts = []
    for tag, graph in trace.graphs.items():
        text = export_adjacency_heatmap(graph, args.utterance)
        parts.append(text if not parts else text.split("\n", 1)[1])
    csv_text = "".join(parts)
    if args.output:
        Path(args.output).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmgcn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--dialogues", type=int, default=30)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--max-speakers", type=int, default=2)
    p.add_argument("--dims", help="e.g. a=20,v=12,t=24")
    p.add_argument("--informativeness", help="e.g. t=0.9,a=0.6,v=0.3")
    p.add_argument("--separation", type=float, default=2.5)
    p.add_argument("--persistence", type=float, default=0.7)
    p.add_argument("--speaker-bias", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", "-o")
    p.add_argument("--report")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="ablation sweep over one axis")
    p.add_argument("--corpus", required=True)
    p.add_argument("--axis", required=True, choices=["modality", "layers", "speaker", "fusion",
                                                     "modality_subset", "num_layers", "speaker_embedding"])
    p.add_argument("--values", help="comma-separated cell values (default: the axis' standard set)")
    p.add_argument("--reference")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output")
    _add_model_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("heatmap", help="adjacency weights of one utterance as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--dialogue", help="dialogue id (default: first)")
    p.add_argument("--utterance", type=int, required=True, help="0-based utterance index")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CorpusError, CheckpointError, CLIError, TrainingDiverged, ValueError, IndexError) as exc:
        print(f"mmgcn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"mmgcn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
