"""Command-line entry point: ``freqcap <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import TrainConfig
from .corpus import (build_vocabulary, classify_tokens, compute_frequency_stats, frequency_report,
                     ingest_dataset, summary_table)
from .experiments import SWEEP_PARAMS, generate_all, split_records, sweep, sweep_table
from .fad import build_plan
from .metrics import evaluate, format_table
from .synthetic import SyntheticSpec, write_synthetic
from .training import corpus_labels, fit, init_state, load_features, prepare_data

log = logging.getLogger("freqcap")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_config(args) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = TrainConfig.load(args.config) if getattr(args, "config", None) else TrainConfig()
    overrides = {
        "seed": getattr(args, "seed", None),
        "gamma": getattr(args, "gamma", None),
        "delta": getattr(args, "delta", None),
        "lam": getattr(args, "lam", None),
        "window_size": getattr(args, "window", None),
        "beam_size": getattr(args, "beam", None),
        "epochs": getattr(args, "epochs", None),
    }
    changes = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "no_fad", False):
        changes["fad_enabled"] = False
    if getattr(args, "no_dss", False):
        changes["dss_enabled"] = False
    return cfg.replace(**changes)


def cmd_analyze_corpus(args) -> None:
    records = ingest_dataset(args.dataset)
    gamma = 0.015 if args.gamma is None else args.gamma
    delta = 0.0015 if args.delta is None else args.delta
    vocab = build_vocabulary(records, args.min_count)
    stats = compute_frequency_stats(records, vocab)
    labels = classify_tokens(stats, gamma, delta, vocab.d_e)
    report = frequency_report(stats, labels, vocab)
    out = _out_dir(args)
    _write_json(out / "frequency_report.json", report)
    (out / "frequency_summary.txt").write_text(summary_table(report) + "\n")
    print(summary_table(report))


def cmd_gen_synthetic(args) -> None:
    fields = json.loads(Path(args.spec).read_text()) if args.spec else {}
    for key in ("vocab_size", "zipf_exponent", "n_videos", "captions_per_video",
                "planted_per_video", "K", "d_v", "seed"):
        value = getattr(args, key)
        if value is not None:
            fields[key] = value
    spec = SyntheticSpec(**fields)
    out = _out_dir(args)
    path = write_synthetic(spec, out)
    _write_json(out / "synthetic_spec.json", spec.to_json())
    print(path)


def _load(dataset: str):
    records = ingest_dataset(dataset)
    return records, load_features(records, Path(dataset).parent)


def cmd_train(args) -> None:
    cfg = build_config(args)
    records, feats = _load(args.dataset)
    vocab, labels = corpus_labels(records, cfg)
    data = prepare_data(records, feats, vocab, cfg.t_max)
    state = init_state(cfg, vocab, labels, data.d_v)
    out = _out_dir(args)
    log_path = out / "train_log.jsonl"
    log_path.write_text("")
    fit(state, data, log_path=log_path)
    save_checkpoint(state, out / "checkpoint.bin")
    _write_json(out / "config.json", cfg.to_dict())
    print(out / "checkpoint.bin")


def cmd_generate(args) -> None:
    state = load_checkpoint(args.checkpoint)
    records, feats = _load(args.dataset)
    beam = args.beam or state.config.beam_size
    hyps = generate_all(state, records, feats, beam)
    out = _out_dir(args)
    with open(out / "predictions.jsonl", "w") as fh:
        for vid, toks in hyps.items():
            fh.write(json.dumps({"video_id": vid, "caption": " ".join(toks)}) + "\n")
    print(out / "predictions.jsonl")


def cmd_evaluate(args) -> None:
    records = ingest_dataset(args.dataset)
    refs = {r.video_id: r.captions for r in records}
    hyps = {}
    with open(args.predictions) as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                hyps[obj["video_id"]] = obj["caption"]
    lft = []
    if args.checkpoint:
        meta, _ = read_checkpoint(args.checkpoint)
        lft = [t for t, lab in meta["labels"]["labels"].items() if lab == "LFT"]
    elif args.frequency_report:
        rep = json.loads(Path(args.frequency_report).read_text())
        lft = [t for t, lab in rep["labels"].items() if lab == "LFT"]
    report = evaluate(hyps, refs, lft)
    out = _out_dir(args)
    _write_json(out / "eval_report.json", report.to_json())
    table = format_table({Path(args.predictions).stem: report})
    (out / "eval_table.txt").write_text(table + "\n")
    print(table)


def cmd_inspect_fad(args) -> None:
    state = load_checkpoint(args.checkpoint)
    labels = state.labels
    if args.gamma is not None or args.delta is not None:
        if not args.dataset:
            raise CliError("--gamma/--delta need --dataset to recompute labels")
        records = ingest_dataset(args.dataset)
        stats = compute_frequency_stats(records, state.vocab)
        labels = classify_tokens(stats, args.gamma or labels.gamma, args.delta or labels.delta, state.vocab.d_e)
    plan = build_plan(state.model.embed.weight, labels, state.vocab.id_to_token)
    pairs = [] if plan is None else plan.pairs(state.vocab.id_to_token)
    out = _out_dir(args)
    _write_json(out / "fad_inspection.json", {"epoch": state.epoch, "pairs": pairs})
    for p in pairs[: args.show]:
        print(f"{p['lft']:>12} -> {p['hft']:<12} alpha={p['alpha']:.3f} cos={p['cosine']:+.3f}")


def cmd_sweep(args) -> None:
    cfg = build_config(args)
    grid = [float(x) for x in args.grid.split(",") if x.strip()]
    if not grid:
        raise CliError("sweep grid is empty")
    records, feats = _load(args.dataset)
    if args.eval_dataset:
        train = records
        test, test_feats = _load(args.eval_dataset)
        feats = {**feats, **test_feats}
    else:
        train, test = split_records(records, args.holdout)
    points = sweep(args.param, grid, train, test, feats, cfg)
    out = _out_dir(args)
    _write_json(out / "sweep_report.json", {
        "param": args.param,
        "config": cfg.to_dict(),
        "points": [
            {"value": p.value, "error": p.error, "seconds": p.seconds,
             "report": None if p.report is None else p.report.to_json()}
            for p in points
        ],
    })
    table = sweep_table(args.param, points)
    (out / "sweep_table.txt").write_text(table + "\n")
    print(table)
    for p in points:
        if p.error:
            print(f"{args.param}={p.value:g} failed: {p.error}", file=sys.stderr)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON training config")
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--no-fad", action="store_true")
    p.add_argument("--no-dss", action="store_true")
    p.add_argument("--beam", type=int)
    p.add_argument("--epochs", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="freqcap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze-corpus", help="frequency statistics and HFT/LFT/UMT labels")
    p.add_argument("--dataset", required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_analyze_corpus)

    p = sub.add_parser("gen-synthetic", help="write a seeded long-tailed corpus with features")
    p.add_argument("--spec", help="JSON file with synthetic corpus fields")
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--zipf", dest="zipf_exponent", type=float)
    p.add_argument("--videos", dest="n_videos", type=int)
    p.add_argument("--captions", dest="captions_per_video", type=int)
    p.add_argument("--planted", dest="planted_per_video", type=int)
    p.add_argument("--frames", dest="K", type=int)
    p.add_argument("--d-v", dest="d_v", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train a captioner (ablation via --no-fad/--no-dss)")
    p.add_argument("--dataset", required=True)
    _train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="beam-search captions from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="BLEU-4 / ROUGE-L / CIDEr / LFT recall")
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", help="take LFT labels from this checkpoint")
    p.add_argument("--frequency-report", help="take LFT labels from an analyze-corpus report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-fad", help="dump LFT->HFT diffusion pairs of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--show", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_fad)

    p = sub.add_parser("sweep", help="one training run per grid value")
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--dataset", required=True)
    p.add_argument("--eval-dataset")
    p.add_argument("--holdout", type=float, default=0.2)
    _train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:
        if args.verbose:
            log.exception("command failed")
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"freqcap {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
