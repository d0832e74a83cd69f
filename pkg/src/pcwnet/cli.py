"""Command-line front end: ``generate``, ``train``, ``baseline``, ``eval`` and ``repro``.

Every stage writes into a subdirectory of the output directory and leaves a
``run.json`` there recording the config hash, the seed and sha256 digests of
what it read and wrote::

    OUT/data/                      generate
    OUT/train/lambda_<value>/      train (one directory per lambda)
    OUT/baseline/                  baseline
    OUT/eval/                      eval
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import baseline as B
from . import config as C
from . import datagen as D
from . import evaluation as E
from . import model as M
from .errors import ConfigError, ContractError, ParseError, StageError, TrainingError
from .hog import LinearClassifier
from .plotting import roc_figure
from .tensor import Rng, load_checkpoint, save_checkpoint

log = logging.getLogger("pcwnet")

HOG_METHOD = "HoG baseline"
LOG_DIGEST_COLUMNS = M.LOG_COLUMNS[:4]  # wall_ms is timing, not a result


# ------------------------------------------------------------ bookkeeping

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def log_digest(path):
    """Digest of a training log with the wall-clock column left out."""
    h = hashlib.sha256()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            h.update((",".join(row[c] for c in LOG_DIGEST_COLUMNS) + "\n").encode())
    return h.hexdigest()


def digest(path):
    return log_digest(path) if Path(path).name == "log.csv" else sha256_file(path)


def tree_digests(root, base):
    """Digests of every file below ``root`` except run manifests, keyed by path relative to ``base``."""
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file() and p.name != "run.json":
            out[p.relative_to(base).as_posix()] = digest(p)
    return out


def write_run_manifest(stage_dir, out, command, cfg, inputs, extra=None):
    record = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "inputs": inputs,
        "outputs": tree_digests(stage_dir, out),
    }
    record.update(extra or {})
    with open(Path(stage_dir) / "run.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


def _data_dir(out):
    return Path(out) / "data"


def _train_dir(out, lam):
    return Path(out) / "train" / f"lambda_{lam!r}"


def _require(path, command, what):
    if not Path(path).exists():
        raise StageError(f"{what} not found at {path}; run `pcwnet {command}` first")


def _manifest(out, split):
    path = _data_dir(out) / f"{split}.csv"
    _require(path, "generate", f"{split} dataset")
    return D.read_manifest(str(path))


def method_name(lam):
    return f"CNN lambda={lam:g}"


# ----------------------------------------------------------------- stages

def cmd_generate(cfg):
    out = Path(cfg.out)
    data = _data_dir(out)
    width, height = cfg.image_size
    for split, count in (("train", cfg.train_count), ("test", cfg.test_count)):
        log.info("generate: %d %s images at %dx%d", count, split, width, height)
        D.generate_dataset(str(data), count, split, width, height, cfg.warning_fraction, cfg.seed, cfg.scene)
    write_run_manifest(data, out, "generate", cfg, {},
                       {"image_size": [width, height], "counts": [cfg.train_count, cfg.test_count]})
    return data


def cmd_train(cfg):
    out = Path(cfg.out)
    train = _manifest(out, "train")
    arch = cfg.architecture
    images, labels, seg = D.load_arrays(D.balance(train))
    if images.shape[2:] != (arch.height, arch.width):
        raise ConfigError(f"scale_divisor: network expects {arch.width}x{arch.height} images, "
                          f"dataset has {images.shape[3]}x{images.shape[2]}; regenerate the data")
    run_dir = _train_dir(out, cfg.lam)
    run_dir.mkdir(parents=True, exist_ok=True)
    for old in run_dir.glob("checkpoint_*.bin"):
        old.unlink()
    graph = M.build(arch, Rng(cfg.seed).child("init"))
    log.info("train: lambda=%g, %d parameters, %d balanced samples", cfg.lam, graph.parameter_count(), len(labels))

    def progress(it, _graph, row):
        if it % 200 == 0:
            log.info("train: it %d  l_total %.4f  l_ce %.4f  l_euclid %.2f", it, row[1], row[2], row[3])

    rows = M.train(graph, M.TrainingSet(images, labels, seg), cfg.optimizer, cfg.lam,
                   Rng(cfg.seed).child("batches"), callbacks=[progress],
                   checkpoint_dir=str(run_dir), checkpoint_every=cfg.checkpoint_every)
    with open(run_dir / "log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(M.LOG_COLUMNS)
        for it, lt, lc, le, ms in rows:
            w.writerow([it, repr(lt), repr(lc), repr(le), f"{ms:.3f}"])
    graph.save(run_dir / "final.bin")

    plain_x, plain_y, _ = D.load_arrays(train)
    accuracy = float(np.mean((M.predict_scores(graph, plain_x) > 0.5) == plain_y))
    sm = M.smoothed([r[1] for r in rows])
    summary = {
        "lambda": cfg.lam,
        "iterations": len(rows),
        "smoothed_l_total_first10": float(sm[min(9, len(sm) - 1)]),
        "smoothed_l_total_final": float(sm[-1]),
        "train_accuracy": accuracy,
    }
    log.info("train: smoothed loss %.4f -> %.4f, training accuracy %.3f",
             summary["smoothed_l_total_first10"], summary["smoothed_l_total_final"], accuracy)
    write_run_manifest(run_dir, out, "train", cfg, {"data/train.csv": sha256_file(_data_dir(out) / "train.csv")},
                       summary)
    return run_dir


def cmd_baseline(cfg):
    out = Path(cfg.out)
    train, test = _manifest(out, "train"), _manifest(out, "test")
    scenes = D.load_scenes(str(_data_dir(out)), "train")
    clf = B.fit_detector(train, scenes, cfg.seed, epochs=cfg.baseline_epochs, lr=cfg.baseline_lr,
                         mining_images=cfg.baseline_mining_images)
    log.info("baseline: window accuracy %.3f; scoring %d test images", clf.train_accuracy, len(test))
    scores, rows = B.score_images(test, clf, threshold=cfg.baseline_threshold)
    run_dir = out / "baseline"
    run_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(run_dir / "classifier.bin", clf.params())
    B.write_detections(run_dir / "detections.csv", rows)
    E.write_scores_csv(run_dir / "scores.csv", E.ScoredSet(HOG_METHOD, scores, test.labels()))
    write_run_manifest(run_dir, out, "baseline", cfg,
                       {f"data/{s}.csv": sha256_file(_data_dir(out) / f"{s}.csv") for s in ("train", "test")},
                       {"window_accuracy": clf.train_accuracy,
                        "images_without_detection": int(np.sum(np.isinf(scores)))})
    return run_dir


def _trained_models(out):
    found = []
    for d in sorted((Path(out) / "train").glob("lambda_*")):
        if (d / "final.bin").is_file():
            found.append((float(d.name[len("lambda_"):]), d))
    return sorted(found)


def cmd_eval(cfg):
    out = Path(cfg.out)
    test = _manifest(out, "test")
    _require(out / "baseline" / "scores.csv", "baseline", "baseline scores")
    models = _trained_models(out)
    if not models:
        raise StageError(f"no trained model under {out / 'train'}; run `pcwnet train` first")
    methods = [E.read_scores_csv(out / "baseline" / "scores.csv", HOG_METHOD)]
    images, labels, _ = D.load_arrays(test)
    inputs = {"baseline/scores.csv": sha256_file(out / "baseline" / "scores.csv")}
    for lam, d in models:
        graph = M.NetworkGraph.from_params(M.ArchitectureConfig(cfg.scale_divisor, lam),
                                           load_checkpoint(d / "final.bin"))
        methods.append(E.ScoredSet(method_name(lam), M.predict_scores(graph, images), labels))
        inputs[(d / "final.bin").relative_to(out).as_posix()] = sha256_file(d / "final.bin")
    report = E.compare(methods, cfg.fpr_target)

    run_dir = out / "eval"
    run_dir.mkdir(parents=True, exist_ok=True)
    for m in methods:
        slug = _slug(m.method)
        E.write_roc_csv(run_dir / f"roc_{slug}.csv", report.curves[m.method])
        E.write_scores_csv(run_dir / f"scores_{slug}.csv", m)
    E.write_report_csv(run_dir / "report.csv", report)
    (run_dir / "report.txt").write_text(report.text())
    roc_figure(report.curves, run_dir / "roc.svg", cfg.fpr_target)
    write_run_manifest(run_dir, out, "eval", cfg, inputs, {"ordering": report.ordering()})
    return report


def _slug(name):
    return "".join(ch if ch.isalnum() or ch in ".-" else "_" for ch in name.lower())


def cmd_repro(cfg):
    cmd_generate(cfg)
    for lam in sorted({0.0, cfg.lam}):
        cmd_train(cfg.replace(lam=lam))
    cmd_baseline(cfg)
    return cmd_eval(cfg)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "repro": cmd_repro,
}


# --------------------------------------------------------------- frontend

def build_parser():
    p = argparse.ArgumentParser(prog="pcwnet", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", default=None,
                   help="config file, or 'desk' for the shipped desk-scale profile (default: built-in defaults)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--lambda", dest="lam", type=float, help="override the segmentation loss weight")
    p.add_argument("--scale", type=int, help="override scale_divisor")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    cfg = C.load(args.config) if args.config else C.ExperimentConfig()
    overrides = {"seed": args.seed, "out": args.out, "lam": args.lam, "scale_divisor": args.scale}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**overrides) if overrides else cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        os.makedirs(cfg.out, exist_ok=True)
        result = COMMANDS[args.command](cfg)
    except (ConfigError, ContractError, ParseError, StageError, TrainingError) as err:
        print(f"pcwnet {args.command}: error: {err}", file=sys.stderr)
        return 2
    if isinstance(result, E.Report):
        sys.stdout.write(result.text())
    else:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
