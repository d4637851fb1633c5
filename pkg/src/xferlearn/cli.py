"""Command-line entry point.

Subcommands: pretrain, transfer, uda, gradcheck, eval.  Every run writes
its resolved config, metrics CSV, checkpoints, and a seeds manifest into
the output directory, enough to re-run bit-identically when the
deterministic flag is set.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from . import trainer
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Config, ConfigError, dump_config, load_config
from .gradcheck import TOLERANCE, run_suite
from .layers import (EmbeddingNetwork, ablation_embedding_spec,
                     digit_embedding_spec, synth_embedding_spec)
from .metrics import aggregate, evaluate

CSV_FIELDS = ["step", "loss_sup", "loss_dt_d", "loss_dt_e", "loss_st_src",
              "loss_st_sup", "loss_st_unsup", "loss_total", "eval_acc"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


def _net_spec(cfg: Config, n_classes: int):
    if cfg.experiment == "digits":
        return digit_embedding_spec(n_classes=n_classes)
    if cfg.experiment == "ablation":
        return ablation_embedding_spec(n_classes=n_classes)
    if cfg.experiment == "synth":
        return synth_embedding_spec(n_classes=n_classes)
    raise UsageError(f"unknown experiment {cfg.experiment!r}")


def _image_size(cfg: Config) -> int:
    return {"digits": 32, "ablation": 28, "synth": 16}[cfg.experiment]


def _default_disc_taps(cfg: Config, disjoint: bool):
    if cfg.disc_taps:
        return tuple(cfg.disc_taps)
    if cfg.experiment == "digits":
        # label spaces differ: second- and third-last activations
        return ("pool4_flat", "fc1") if disjoint else ("pool4_flat", "fc1", "fc2")
    return ("flat", "fc1") if disjoint else ("flat", "fc1", "fc2")


def _resize_ds(ds, size):
    images = D.resize_bilinear(ds.images, size)
    if isinstance(ds, D.LabeledDataset):
        return D.LabeledDataset(images=images, labels=ds.labels, name=ds.name,
                                classes=ds.classes)
    return D.UnlabeledDataset(images=images, name=ds.name)


def _require(path: str, what: str) -> str:
    if not path:
        raise UsageError(f"missing required path for {what}")
    if not Path(path).exists():
        raise UsageError(f"{what} path does not exist: {path}")
    return path


def _load_source(cfg: Config) -> D.LabeledDataset:
    if cfg.experiment == "synth":
        classes = cfg.source_classes or (0, 1, 2, 3, 4)
        return D.synth_digits(200, classes, image_size=16, seed=cfg.seed)
    ds = D.load_idx(_require(cfg.source_images, "source images"),
                    _require(cfg.source_labels, "source labels"), name="source")
    if cfg.source_classes:
        ds = D.filter_classes(ds, cfg.source_classes)
    ds = _resize_ds(ds, _image_size(cfg))
    if cfg.source_subsample and len(ds) > cfg.source_subsample:
        rng = np.random.default_rng((cfg.seed, 41))
        idx = np.sort(rng.choice(len(ds), size=cfg.source_subsample, replace=False))
        ds = D.LabeledDataset(images=ds.images[idx], labels=ds.labels[idx],
                              name=ds.name, classes=ds.classes)
    return ds


def _load_target_pool(cfg: Config) -> D.LabeledDataset:
    if cfg.experiment == "synth":
        classes = cfg.target_classes or (0, 1, 2, 3, 4)
        pool = D.synth_digits(200, classes, image_size=16, seed=cfg.seed + 100,
                              domain_shift=True)
        if cfg.target_classes:
            pool = D.filter_classes(pool, cfg.target_classes)
        return pool
    ds = D.load_idx(_require(cfg.target_images, "target images"),
                    _require(cfg.target_labels, "target labels"), name="target")
    if cfg.target_classes:
        ds = D.filter_classes(ds, cfg.target_classes)
    return _resize_ds(ds, _image_size(cfg))


def _load_test(cfg: Config) -> D.LabeledDataset:
    if cfg.experiment == "synth":
        classes = cfg.target_classes or (0, 1, 2, 3, 4)
        pool = D.synth_digits(50, classes, image_size=16, seed=cfg.seed + 999,
                              domain_shift=True)
        if cfg.target_classes:
            pool = D.filter_classes(pool, cfg.target_classes)
        return pool
    ds = D.load_idx(_require(cfg.test_images, "test images"),
                    _require(cfg.test_labels, "test labels"), name="test")
    if cfg.target_classes:
        ds = D.filter_classes(ds, cfg.target_classes)
    return _resize_ds(ds, _image_size(cfg))


def _write_metrics(path: Path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def _prepare_outdir(cfg: Config) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    (out / "seeds.txt").write_text("\n".join(str(s) for s in cfg.seeds) + "\n")
    return out


def _save_net(path: Path, net: EmbeddingNetwork, cfg: Config, step: int = 0) -> None:
    save_checkpoint(path, net.state_dict(), config_text=dump_config(cfg), step=step)


def _load_net(path, cfg: Config, n_classes: int) -> EmbeddingNetwork:
    ckpt = load_checkpoint(path)
    net = EmbeddingNetwork(_net_spec(cfg, n_classes), seed=0)
    net.load_state_dict(ckpt.tensors)
    return net


# -- subcommands ------------------------------------------------------------


def cmd_pretrain(cfg: Config) -> int:
    out = _prepare_outdir(cfg)
    d1 = _load_source(cfg)
    spec = _net_spec(cfg, n_classes=len(set(d1.classes)))
    net, record = trainer.pretrain_source(d1, spec, cfg)
    _write_metrics(out / "pretrain_metrics.csv", record.rows)
    _save_net(out / "source.ckpt", net, cfg, step=cfg.pretrain_steps)
    acc = evaluate(net, d1).accuracy
    print(f"pretrain done: source train accuracy {acc:.4f}, "
          f"checkpoint {out / 'source.ckpt'}")
    return EXIT_OK


def cmd_transfer(cfg: Config) -> int:
    out = _prepare_outdir(cfg)
    ckpt_path = _require(cfg.checkpoint, "source checkpoint")
    d1 = _load_source(cfg)
    pool = _load_target_pool(cfg)
    test = _load_test(cfg)
    n_source = len(set(d1.classes))
    n_target = len(set(pool.classes))
    disjoint = (tuple(cfg.source_classes) != tuple(cfg.target_classes)
                or cfg.experiment == "digits")
    per_run = []
    for method in cfg.methods:
        for k in cfg.k_values:
            for seed in cfg.seeds:
                run_cfg = replace(cfg, seed=seed,
                                  disc_taps=_default_disc_taps(cfg, disjoint))
                d2, d3 = D.make_splits(pool, k, seed)
                source_net = _load_net(ckpt_path, cfg, n_source)
                if method == "target_only":
                    net, record = trainer.run_baseline(
                        "target_only", d2, run_cfg, net_spec=_net_spec(cfg, n_target))
                elif method == "fine_tune":
                    net, record = trainer.run_baseline(
                        "fine_tune", d2, run_cfg, source_net=source_net,
                        reinit_head=disjoint)
                elif method in ("full", "adv_only"):
                    mcfg = replace(run_cfg, beta=0.0) if method == "adv_only" else run_cfg
                    net, record = trainer.adapt_joint(source_net, d1, d2, d3, mcfg,
                                                      reinit_head=disjoint)
                else:
                    raise UsageError(f"unknown method {method!r}")
                acc = evaluate(net, test).accuracy
                tag = f"{method}_k{k}_seed{seed}"
                _write_metrics(out / f"metrics_{tag}.csv", record.rows)
                _save_net(out / f"{tag}.ckpt", net, run_cfg, step=run_cfg.steps)
                per_run.append({"method": method, "k": k, "seed": seed, "accuracy": acc})
                print(f"{tag}: test accuracy {acc:.4f}")
    with open(out / "runs.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["method", "k", "seed", "accuracy"])
        writer.writeheader()
        writer.writerows(per_run)
    agg_rows = []
    for method in cfg.methods:
        for k in cfg.k_values:
            accs = [r["accuracy"] for r in per_run
                    if r["method"] == method and r["k"] == k]
            if len(accs) >= 2:
                agg = aggregate(accs)
                agg_rows.append({"method": method, "k": k, "mean": agg.mean,
                                 "stderr": agg.stderr, "n_seeds": agg.n_seeds})
            else:
                agg_rows.append({"method": method, "k": k, "mean": accs[0],
                                 "stderr": "", "n_seeds": 1})
    with open(out / "aggregate.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["method", "k", "mean", "stderr", "n_seeds"])
        writer.writeheader()
        writer.writerows(agg_rows)
    print(f"aggregate table: {out / 'aggregate.csv'}")
    return EXIT_OK


def cmd_uda(cfg: Config) -> int:
    out = _prepare_outdir(cfg)
    ckpt_path = _require(cfg.checkpoint, "source checkpoint")
    d1 = _load_source(cfg)
    pool = _load_target_pool(cfg)
    test = _load_test(cfg)
    n_classes = len(set(d1.classes))
    rows = []
    for seed in cfg.seeds:
        run_cfg = replace(cfg, seed=seed,
                          disc_taps=_default_disc_taps(cfg, disjoint=False))
        source_net = _load_net(ckpt_path, cfg, n_classes)
        source_acc = evaluate(source_net, test).accuracy
        rng = np.random.default_rng((seed, 53))
        idx = rng.permutation(len(pool))
        d3 = D.UnlabeledDataset(images=pool.images[idx], name="uda-target")
        net, record = trainer.adapt_unsupervised(source_net, d1, d3, run_cfg)
        adapted_acc = evaluate(net, test).accuracy
        _write_metrics(out / f"uda_metrics_seed{seed}.csv", record.rows)
        _save_net(out / f"uda_seed{seed}.ckpt", net, run_cfg, step=run_cfg.steps)
        rows.append({"seed": seed, "source_only": source_acc, "adapted": adapted_acc})
        print(f"seed {seed}: source_only {source_acc:.4f} adapted {adapted_acc:.4f}")
    with open(out / "uda.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["seed", "source_only", "adapted"])
        writer.writeheader()
        writer.writerows(rows)
    if len(rows) >= 2:
        src = aggregate([r["source_only"] for r in rows])
        ada = aggregate([r["adapted"] for r in rows])
        print(f"source_only {src.mean:.4f} +/- {src.stderr:.4f}; "
              f"adapted {ada.mean:.4f} +/- {ada.stderr:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(instances=args.instances, seed=args.seed, corrupt=args.corrupt)
    failed = False
    for name, err in results:
        status = "ok" if err <= TOLERANCE else "FAIL"
        if err > TOLERANCE:
            failed = True
        print(f"{name:24s} max rel err {err:.3e}  {status}")
    print(f"{len(results)} ops checked, tolerance {TOLERANCE:g}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_eval(cfg: Config) -> int:
    ckpt_path = _require(cfg.checkpoint, "checkpoint")
    test = _load_test(cfg)
    n_classes = len(set(test.classes))
    net = _load_net(ckpt_path, cfg, n_classes)
    result = evaluate(net, test)
    print(f"accuracy {result.accuracy:.4f} on {result.n_examples} examples")
    for c in sorted(result.per_class):
        print(f"  class {c}: {result.per_class[c]:.4f}")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(prog="xferlearn")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("pretrain", "transfer", "uda", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        # any other --key value pair overrides the matching config entry
    g = sub.add_parser("gradcheck")
    g.add_argument("--instances", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corrupt", action="store_true",
                   help="include a deliberately broken rule (self-test)")
    return parser


def _parse_overrides(tokens) -> dict:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise UsageError(f"expected --key, got {tok!r}")
        if i + 1 >= len(tokens):
            raise UsageError(f"missing value for {tok}")
        out[tok[2:]] = tokens[i + 1]
        i += 2
    return out


def main(argv=None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        overrides = _parse_overrides(extra)
        cfg = load_config(args.config, overrides)
        handler = {"pretrain": cmd_pretrain, "transfer": cmd_transfer,
                   "uda": cmd_uda, "eval": cmd_eval}[args.command]
        return handler(cfg)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, D.IdxParseError, D.SplitError,
            trainer.TrainDivergence, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
