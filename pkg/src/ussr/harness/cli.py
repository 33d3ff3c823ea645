"""Command-line entry point.

Typical synthetic run::

    ussr gen-synth --out data/
    ussr train-universal --config run.conf --out universal.ckpt
    ussr train-segments --checkpoint universal.ckpt --out model.ckpt
    ussr evaluate --checkpoint model.ckpt --data data/test.csv
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..expansion import AuditLog, ExpansionBuffer, ExpansionError, expand_cluster, expand_segment, score_and_buffer
from ..featurepipe import FeatureStats, write_cache
from . import checkpoint
from .config import Config
from .metrics import MetricsWriter, evaluate_auc
from .synth import SyntheticSpec, generate_synthetic, read_segment_features, write_dataset
from .train import build_model, load_dataset, prepare, train_segments, train_universal

log = logging.getLogger("ussr")


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = args.seed
    return out


def _config(args) -> Config:
    return Config.load(args.config, **_overrides(args))


def _model(args):
    """Checkpoint plus any --config / --set / --seed overrides applied to its config."""
    model = checkpoint.load(args.checkpoint)
    over = _overrides(args)
    if args.config:
        base = Config.load(args.config, **over)
        model.config = base
    elif over:
        model.config = Config.from_mapping({**json.loads(model.config.to_json()), **over})
    return model


def cmd_gen_synth(args) -> None:
    cfg = _config(args)
    spec = SyntheticSpec(n_modes=cfg.synth_modes, n_segments=cfg.synth_segments, tail_exponent=cfg.synth_tail,
                         holdout_mode=cfg.synth_holdout_mode, segment_dim=cfg.segment_dim,
                         train_rows=cfg.synth_train_rows, val_rows=cfg.synth_val_rows,
                         test_rows=cfg.synth_test_rows, phase2_rows=cfg.synth_phase2_rows,
                         new_segment_rows=cfg.synth_new_segment_rows)
    paths = write_dataset(generate_synthetic(spec, cfg.seed), args.out)
    for name, path in sorted(paths.items()):
        print(f"{name}\t{path}")


def cmd_prepare_data(args) -> None:
    cfg = _config(args)
    prepared = prepare(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.json").write_text(prepared.stats.to_json())
    for name in ("train", "val", "test"):
        data = getattr(prepared, name)
        if data is not None:
            write_cache(data, out / f"{name}.enc")
            print(f"{name}\t{len(data)} rows\t{out / f'{name}.enc'}")
    print(f"stats\t{out / 'stats.json'}")


def cmd_train_universal(args) -> None:
    cfg = _config(args)
    stats = FeatureStats.from_json(Path(args.stats).read_text()) if args.stats else None
    prepared = prepare(cfg, stats)
    model = build_model(cfg, prepared)
    losses = train_universal(model, prepared.train, prepared.val, MetricsWriter(cfg.metrics_path or None))
    checkpoint.save(model, args.out)
    print(f"universal loss {losses[0]:.5f} -> {losses[-1]:.5f}; K={model.n_clusters}; saved {args.out}")


def cmd_train_segments(args) -> None:
    model = _model(args)
    cfg = model.config
    train = load_dataset(cfg.train_path, model.stats)
    val = load_dataset(cfg.val_path, model.stats) if cfg.val_path else None
    if int(train.segment.max()) >= model.n_segments:
        raise SystemExit(f"training data has segment {int(train.segment.max())}, "
                         f"model has {model.n_segments} segments")
    losses = train_segments(model, train, val, MetricsWriter(cfg.metrics_path or None, append=True))
    checkpoint.save(model, args.out)
    print(f"segment loss {losses[0]:.5f} -> {losses[-1]:.5f}; M={model.n_segments}; saved {args.out}")


def cmd_expand_clusters(args) -> None:
    model = _model(args)
    cfg = model.config
    data = load_dataset(args.data, model.stats)
    buffer = ExpansionBuffer(cfg.t_logit, cfg.t_num)
    score_and_buffer(model.universal, buffer, data)
    print(f"buffered {len(buffer)} of {len(data)} examples (t_logit={cfg.t_logit}, t_num={cfg.t_num})")
    if len(buffer) <= cfg.t_num:
        print(f"no expansion; K stays {model.n_clusters}")
    else:
        old = model.n_clusters
        expand_cluster(model.universal, buffer, model.rng, cfg.learning_rate, epochs=cfg.few_shot_epochs,
                       batch_size=cfg.batch_size, perturb_scale=cfg.perturb_scale, clip=cfg.clip,
                       audit=AuditLog(cfg.audit_path or None))
        print(f"K {old} -> {model.n_clusters}")
    checkpoint.save(model, args.out)


def cmd_expand_segment(args) -> None:
    model = _model(args)
    cfg = model.config
    data = load_dataset(args.data, model.stats)
    u = None
    if args.segment_features:
        feats = read_segment_features(args.segment_features)
        if model.n_segments not in feats:
            raise SystemExit(f"{args.segment_features} has no row for segment {model.n_segments}")
        u = feats[model.n_segments]
    try:
        old = model.n_segments
        expand_segment(model.universal, model.bipartite, data, model.rng, cfg.learning_rate,
                       epochs=cfg.segment_epochs, batch_size=cfg.batch_size, u=u, clip=cfg.clip,
                       audit=AuditLog(cfg.audit_path or None))
    except ExpansionError as exc:
        raise SystemExit(f"expand-segment: {exc}") from None
    checkpoint.save(model, args.out)
    print(f"M {old} -> {model.n_segments}; saved {args.out}")


def _scores(model, data, universal: bool) -> np.ndarray:
    return model.predict_universal(data) if universal else model.predict(data)


def cmd_predict(args) -> None:
    model = _model(args)
    data = load_dataset(args.data, model.stats)
    p = _scores(model, data, args.universal)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "segment", "probability"])
        for i, (m, v) in enumerate(zip(data.segment, p)):
            w.writerow([i, int(m), repr(float(v))])
    print(f"wrote {len(p)} predictions to {args.out}")


def cmd_evaluate(args) -> None:
    model = _model(args)
    data = load_dataset(args.data, model.stats)
    result = {"rows": len(data),
              "auc_universal": evaluate_auc(model.predict_universal(data), data.label),
              "auc_segment": evaluate_auc(model.predict(data), data.label)}
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ussr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help, out_required=True, checkpoint_in=False, data=False):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        p.add_argument("--out", required=out_required, help="output path")
        if checkpoint_in:
            p.add_argument("--checkpoint", required=True, help="input checkpoint")
        if data:
            p.add_argument("--data", required=True, help="CSV or .enc file")
        p.set_defaults(fn=fn)
        return p

    add("gen-synth", cmd_gen_synth, "write a synthetic dataset directory")
    add("prepare-data", cmd_prepare_data, "fit feature statistics and write encoded caches")
    p = add("train-universal", cmd_train_universal, "phase 1: fit the universal representation")
    p.add_argument("--stats", help="stats.json from prepare-data (inputs may then be .enc caches)")
    add("train-segments", cmd_train_segments, "phase 2: fit the segment path", checkpoint_in=True)
    add("expand-clusters", cmd_expand_clusters, "buffer poorly explained data and add a cluster",
        checkpoint_in=True, data=True)
    p = add("expand-segment", cmd_expand_segment, "register and fit one new segment",
            checkpoint_in=True, data=True)
    p.add_argument("--segment-features", help="segment features CSV holding the new segment's row")
    p = add("predict", cmd_predict, "write per-row probabilities", checkpoint_in=True, data=True)
    p.add_argument("--universal", action="store_true", help="use the universal path instead of the segment path")
    add("evaluate", cmd_evaluate, "AUC of both prediction paths", out_required=False,
        checkpoint_in=True, data=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.fn(args)
    except (ValueError, RuntimeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
