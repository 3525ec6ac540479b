"""Command-line entry points.

Subcommands: synth-data, build-vocab, train, generate, evaluate,
inspect-topics. Configuration comes from an optional JSON file plus
`--set key=value` overrides; the data directory defaults to the
PARAGEN_DATA_DIR environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from paragen import corpus
from paragen.checkpoint import Checkpoint
from paragen.config import TrainConfig
from paragen.tensor import RngStream
from paragen.training import (Phase1Trainer, Phase2Trainer, evaluate,
                              model_from_checkpoint)

DATA_ENV = "PARAGEN_DATA_DIR"


def _data_dir(args) -> Path:
    path = args.data or os.environ.get(DATA_ENV)
    if not path:
        raise SystemExit(f"no data directory: pass --data or set {DATA_ENV}")
    return Path(path)


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"bad --set {item!r}, expected key=value")
        key, value = item.split("=", 1)
        overrides[key] = json.loads(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg


def _load_dataset(data_dir: Path, cfg: TrainConfig) -> corpus.Dataset:
    records = corpus.load_records_jsonl(data_dir / "dataset.jsonl")
    feat_path = data_dir / "features.bin"
    if not feat_path.exists():
        feat_path = data_dir / "features.jsonl"
    features = corpus.load_features(feat_path, cfg.m_regions)
    with open(data_dir / "split.json") as fh:
        split = corpus.SplitSpec.from_json(json.load(fh))
    vocab_path = data_dir / "vocab.json"
    if vocab_path.exists():
        vocab = corpus.Vocabulary.load(vocab_path)
    else:
        vocab = corpus.build_vocab(
            [records[i] for i in split.train], min_count=cfg.min_count)
    return corpus.Dataset(records=records, features=features, split=split,
                          vocab=vocab)


def cmd_synth_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(args.seed)
    print(f"seed: {args.seed}")
    spec = corpus.GrammarSpec(objects_per_image=args.objects_per_image,
                              n_object_types=args.object_types,
                              d_raw=args.d_raw, m_regions=args.m_regions,
                              noise=args.noise)
    data = corpus.synthesize_dataset(rng, args.n_images, spec)
    corpus.save_records_jsonl(out / "dataset.jsonl", data.records)
    corpus.save_features(out / "features.bin", data.region_sets)
    split = corpus.make_split([r.image_id for r in data.records],
                              n_val=args.n_val, n_test=args.n_test)
    with open(out / "split.json", "w") as fh:
        json.dump(split.to_json(), fh)
    with open(out / "objects.txt", "w") as fh:
        fh.write("\n".join(data.object_tokens) + "\n")
    print(f"wrote {args.n_images} images to {out}")
    return 0


def cmd_build_vocab(args) -> int:
    cfg = _load_config(args)
    data_dir = _data_dir(args)
    records = corpus.load_records_jsonl(data_dir / "dataset.jsonl")
    with open(data_dir / "split.json") as fh:
        split = corpus.SplitSpec.from_json(json.load(fh))
    vocab = corpus.build_vocab([records[i] for i in split.train],
                               min_count=args.min_count or cfg.min_count)
    vocab.save(data_dir / "vocab.json")
    print(f"vocabulary size {len(vocab)} -> {data_dir / 'vocab.json'}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    print(f"seed: {cfg.seed}")
    dataset = _load_dataset(_data_dir(args), cfg)
    log = (lambda info: print(json.dumps(info))) if args.verbose else None
    ckpt = None
    if args.resume:
        ckpt = Checkpoint.load(args.resume)
    if args.phase in ("1", "both"):
        trainer = Phase1Trainer(cfg, dataset, checkpoint=ckpt)
        ckpt = trainer.run(epochs=args.epochs, max_steps=args.max_steps, log=log)
        print(f"phase 1 done at step {ckpt.step}, best val {ckpt.best_val}")
    if args.phase in ("2", "both"):
        if ckpt is None:
            raise SystemExit("phase 2 needs --resume with a phase-1 checkpoint")
        trainer = Phase2Trainer(cfg, dataset, ckpt)
        ckpt = trainer.run(updates=args.updates, log=log)
        print(f"phase 2 done at step {ckpt.step}, val reward {ckpt.best_val}")
    ckpt.save(args.out)
    print(f"checkpoint -> {args.out}")
    return 0


def cmd_generate(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    dataset = _load_dataset(_data_dir(args), ckpt.config)
    model = model_from_checkpoint(ckpt)
    ids = args.ids or getattr(dataset.split, args.split)
    rng = RngStream(args.seed if args.seed is not None else ckpt.config.seed)
    out_fh = open(args.out, "w") if args.out else sys.stdout
    try:
        for ident in ids:
            result = model.decode(dataset.features[ident], mode=args.mode,
                                  rng=rng if args.mode == "sample" else None)
            record = {
                "image_id": ident,
                "sentences": [" ".join(model.vocab.decode(t) for t in s)
                              for s in result.paragraph.sentences],
                "token_ids": [list(map(int, s))
                              for s in result.paragraph.sentences],
                "stop_probs": [float(p) for p in result.stop_probs],
            }
            out_fh.write(json.dumps(record) + "\n")
    finally:
        if args.out:
            out_fh.close()
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    dataset = _load_dataset(_data_dir(args), ckpt.config)
    report = evaluate(ckpt, dataset, split=args.split, dump=args.dump)
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return 0


def cmd_inspect_topics(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    dataset = _load_dataset(_data_dir(args), ckpt.config)
    model = model_from_checkpoint(ckpt)
    raw = dataset.features[args.image_id]
    _v, _v_bar, topics, _rows, _stop = model.run_topics(raw, training=False)
    stop_probs = model.cae.predict_stop(topics)
    result = model.decode(raw, mode="greedy", record_attention=True)
    dump = {
        "image_id": args.image_id,
        "topics": topics.data.tolist(),
        "stop_probs": stop_probs.tolist(),
        "sentences": [" ".join(model.vocab.decode(t) for t in s)
                      for s in result.paragraph.sentences],
        "attention": [[a.tolist() for a in sent]
                      for sent in result.attention],
    }
    print(json.dumps(dump, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paragen",
        description="Topic-conditioned image paragraph generation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--data", help=f"data directory (default ${DATA_ENV})")
        if config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="config override (JSON value)")
            p.add_argument("--seed", type=int)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-images", type=int, default=64)
    p.add_argument("--objects-per-image", type=int, default=3)
    p.add_argument("--object-types", type=int, default=8)
    p.add_argument("--d-raw", type=int, default=8)
    p.add_argument("--m-regions", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--n-val", type=int, default=8)
    p.add_argument("--n-test", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("build-vocab", help="build the training vocabulary")
    common(p)
    p.add_argument("--min-count", type=int)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="run training phase 1, 2, or both")
    common(p)
    p.add_argument("--phase", choices=["1", "2", "both"], default="both")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--resume", help="checkpoint to resume / start phase 2 from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--updates", type=int, help="phase-2 update count")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode paragraphs as JSON lines")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--ids", nargs="*")
    p.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--greedy", dest="mode", action="store_const",
                   const="greedy")
    p.add_argument("--sample", dest="mode", action="store_const",
                   const="sample")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--dump", action="store_true",
                   help="include per-image outputs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-topics",
                       help="dump topic vectors, stop probs, attention maps")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image-id", required=True)
    p.set_defaults(func=cmd_inspect_topics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
