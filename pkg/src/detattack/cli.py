"""Command-line experiment runner.

Verbs: generate, train, attack, evaluate, transfer, report. All outputs live
under the run directory given by ``--out`` (or the config's ``out``). Each
verb builds its output in a temporary directory and renames it into place.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .attacks import AttackResult
from .benchmark import run_attack, score
from .config import ExperimentConfig, dump_config, load_config
from .data import generate_shapes_dataset, load_dataset, save_dataset, save_png
from .errors import ApplicabilityError, DetAttackError, ValidationError
from .models import build_model, load_checkpoint, save_checkpoint, train
from .transfer import as_table, cross_model_matrix, matrix_csv, matrix_json, resolution_matrix

logger = logging.getLogger("detattack")

EXIT_OK, EXIT_VALIDATION, EXIT_APPLICABILITY, EXIT_RUNTIME = 0, 2, 3, 4


@contextmanager
def staged_dir(final: Path, force: bool):
    """Yield a temp directory that replaces ``final`` only if the block succeeds."""
    final = Path(final)
    if final.exists() and any(final.iterdir()) and not force:
        raise ValidationError(f"{final} exists and is not empty; pass --force to overwrite")
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}-", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def _echo_config(cfg: ExperimentConfig, where: Path):
    (where / "config.yaml").write_text(dump_config(cfg))


def _run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out)


def _dataset_dirs(cfg):
    root = _run_dir(cfg) / "dataset"
    return root / "train", root / "test"


def _load_split(path: Path):
    if not (path / "annotations.jsonl").exists():
        raise ValidationError(f"no dataset at {path}; run 'generate' first")
    return load_dataset(path)


def _checkpoint_path(cfg, model_id: str) -> Path:
    return _run_dir(cfg) / "models" / f"{model_id}.ckpt"


def _load_model(cfg, model_id):
    spec = cfg.model_spec(model_id)
    path = _checkpoint_path(cfg, spec.model_id)
    if not path.exists():
        raise ValidationError(f"no checkpoint {path}; run 'train' first")
    return load_checkpoint(path)


# -- verbs -------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig, args) -> None:
    d = cfg.dataset
    full = generate_shapes_dataset(cfg.dataset_seed, d.train_count + d.test_count, (d.resolution, d.resolution),
                                   d.num_classes)
    with staged_dir(_run_dir(cfg) / "dataset", args.force) as tmp:
        for name, part in (("train", full.subset(0, d.train_count)),
                           ("test", full.subset(d.train_count, d.train_count + d.test_count))):
            part.meta = {"split": name}
            save_dataset(part, tmp / name)
        _echo_config(cfg, tmp)
    logger.info("wrote %d train and %d test images", d.train_count, d.test_count)


def cmd_train(cfg: ExperimentConfig, args) -> None:
    train_dir, test_dir = _dataset_dirs(cfg)
    trainset = _load_split(train_dir)
    with staged_dir(_run_dir(cfg) / "models", args.force) as tmp:
        log = {}
        for spec in cfg.models:
            if spec.resolution != trainset.resolution[0]:
                raise ValidationError(f"{spec.model_id}: resolution {spec.resolution} differs from the dataset")
            model = build_model(spec.family, trainset.num_classes, (spec.resolution, spec.resolution),
                                spec.backbone, seed=cfg.model_seed(spec))
            result = train(model, trainset, epochs=spec.epochs, learning_rate=spec.learning_rate,
                           seed=cfg.model_seed(spec))
            save_checkpoint(model, tmp / f"{spec.model_id}.ckpt")
            log[spec.model_id] = {"initial_loss": result.initial_loss, "losses": result.losses}
            logger.info("trained %s, final loss %s", spec.model_id, result.losses[-1] if result.losses else None)
        (tmp / "train_log.json").write_text(json.dumps(log, indent=2, sort_keys=True) + "\n")
        _echo_config(cfg, tmp)


def _attack_dir(cfg, model_id):
    return _run_dir(cfg) / "attacks" / f"{cfg.attack.name}__{model_id}"


def cmd_attack(cfg: ExperimentConfig, args) -> None:
    spec = cfg.model_spec(cfg.attack.model)
    model = _load_model(cfg, spec.model_id)
    testset = _load_split(_dataset_dirs(cfg)[1])
    acfg = cfg.attack.config(cfg.seed)
    results = run_attack(model, cfg.attack.name, testset.images, acfg, args.jobs)
    _, records = score(model, cfg.attack.name, results, testset.annotations, acfg, testset.class_names,
                       cfg.metrics.t_iou, cfg.metrics.interpolation, thresholds=())
    with staged_dir(_attack_dir(cfg, spec.model_id), args.force) as tmp:
        (tmp / "adversarial").mkdir()
        (tmp / "preview").mkdir()
        for i, r in enumerate(results):
            np.save(tmp / "adversarial" / f"{i:04d}.npy", r.adversarial)
            save_png(r.adversarial, tmp / "preview" / f"{i:04d}.png")
        with open(tmp / "results.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
        (tmp / "attack_config.json").write_text(json.dumps(acfg.to_dict(), indent=2, sort_keys=True) + "\n")
        _echo_config(cfg, tmp)


def _load_results(adir: Path, testset) -> list:
    path = adir / "results.jsonl"
    if not path.exists():
        raise ValidationError(f"no attack results in {adir}; run 'attack' first")
    results = []
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        i = rec["image"]
        adv = np.load(adir / "adversarial" / f"{i:04d}.npy")
        results.append(AttackResult(adv, testset.images[i], rec["iterations_used"],
                                    rec["timing"]["attack_time_s"], [], [], rec["attack"],
                                    empty_anchor=rec["empty_anchor"], targets=rec["targets"]))
    if len(results) != len(testset):
        raise ValidationError(f"{path} has {len(results)} records for {len(testset)} test images")
    return results


def cmd_evaluate(cfg: ExperimentConfig, args) -> None:
    spec = cfg.model_spec(cfg.attack.model)
    model = _load_model(cfg, spec.model_id)
    testset = _load_split(_dataset_dirs(cfg)[1])
    acfg = cfg.attack.config(cfg.seed)
    if args.benign:
        name = "benign"
        results = [AttackResult(x.copy(), x, 0, 0.0, [], [], name) for x in testset.images]
    else:
        name = cfg.attack.name
        results = _load_results(_attack_dir(cfg, spec.model_id), testset)
    report, _ = score(model, name, results, testset.annotations, acfg, testset.class_names, cfg.metrics.t_iou,
                      cfg.metrics.interpolation, cfg.metrics.thresholds)
    with staged_dir(_run_dir(cfg) / "evaluations" / f"{name}__{spec.model_id}", args.force) as tmp:
        (tmp / "report.json").write_text(report.to_json())
        (tmp / "report.csv").write_text(report.to_csv())
        if args.plots:
            _plot_report(report.to_dict(), tmp)
        _echo_config(cfg, tmp)
    print(f"{name} on {spec.model_id}: benign mAP {100 * report.benign_map:.2f}%, "
          f"adversarial mAP {100 * report.map_value:.2f}%")


def cmd_transfer(cfg: ExperimentConfig, args) -> None:
    t = cfg.transfer
    ids = t.models or [m.model_id for m in cfg.models]
    models = [_load_model(cfg, i) for i in ids]
    testset = _load_split(_dataset_dirs(cfg)[1])
    acfg = cfg.attack.config(cfg.seed) if cfg.attack.name == t.attack else None
    model_cells = cross_model_matrix(t.attack, models, models, testset, acfg, args.jobs, cfg.metrics.t_iou)
    res_model = _load_model(cfg, t.resolution_model or ids[0])
    res_cells = resolution_matrix(t.attack, res_model, [int(r) for r in t.resolutions], testset, acfg, args.jobs,
                                  cfg.metrics.t_iou)
    with staged_dir(_run_dir(cfg) / "transfer" / t.attack, args.force) as tmp:
        (tmp / "cross_model.csv").write_text(matrix_csv(model_cells, "model"))
        (tmp / "cross_model.json").write_text(matrix_json(model_cells))
        (tmp / "cross_resolution.csv").write_text(matrix_csv(res_cells, "resolution"))
        (tmp / "cross_resolution.json").write_text(matrix_json(res_cells))
        if args.plots:
            _plot_matrix(as_table(model_cells, "model"), tmp / "cross_model.png")
            _plot_matrix(as_table(res_cells, "resolution"), tmp / "cross_resolution.png")
        _echo_config(cfg, tmp)
    print(matrix_csv(model_cells, "model"), end="")
    print(matrix_csv(res_cells, "resolution"), end="")


def _find_reports(run_dirs):
    found = []
    for d in run_dirs:
        d = Path(d)
        if not d.exists():
            raise ValidationError(f"run directory {d} does not exist")
        found.extend(sorted(d.rglob("report.json")))
    return found


def cmd_report(cfg: ExperimentConfig, args) -> None:
    if not args.runs:
        raise ValidationError("report needs at least one run directory")
    paths = _find_reports(args.runs)
    if not paths:
        raise ValidationError("no report.json found under the given run directories")
    reports = [json.loads(p.read_text()) for p in paths]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["attack", "model", "num_images", "benign_map", "adv_map", "asr", "mr", "linf", "l2_per_pixel",
                "l0_fraction", "ssim", "attack_time_s", "source"])
    for p, r in zip(paths, reports):
        d = r["distortion"]
        w.writerow([r["attack"], r["model"], r["num_images"], f"{100 * r['benign_map']:.2f}",
                    f"{100 * r['map']:.2f}", "" if r.get("asr") is None else f"{r['asr']:.4f}",
                    "" if r.get("mr") is None else f"{r['mr']:.4f}", f"{d['linf']:.6g}", f"{d['l2_per_pixel']:.6g}",
                    f"{d['l0_fraction']:.6g}", f"{d['ssim']:.6g}", f"{r['timing']['attack_time_s']:.6g}", str(p)])
    out = Path(args.out) if args.out else _run_dir(cfg) / "report"
    with staged_dir(out, args.force) as tmp:
        (tmp / "comparison.csv").write_text(buf.getvalue())
        if args.plots:
            for i, r in enumerate(reports):
                _plot_report(r, tmp, prefix=f"{i:02d}_{r['attack']}__{r['model']}_")
    print(buf.getvalue(), end="")


# -- plots -------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _plot_report(report: dict, where: Path, prefix: str = "") -> None:
    plt = _pyplot()
    names = report.get("class_names") or sorted(report["per_class_ap"])
    keys = sorted(report["per_class_ap"], key=int)
    benign = [100 * (report["benign_per_class_ap"].get(k) or 0.0) for k in keys]
    adv = [100 * (report["per_class_ap"][k] or 0.0) for k in keys]
    x = np.arange(len(keys))
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(x - 0.2, benign, 0.4, label="benign")
    ax.bar(x + 0.2, adv, 0.4, label=report["attack"])
    ax.set_xticks(x, [names[int(k)] if int(k) < len(names) else k for k in keys])
    ax.set_ylabel("AP (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(where / f"{prefix}per_class_ap.png", dpi=100)
    plt.close(fig)
    curves = report.get("objects_vs_threshold") or {}
    if curves.get("thresholds"):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(curves["thresholds"], curves["benign"], marker="o", label="benign")
        ax.plot(curves["thresholds"], curves["adversarial"], marker="o", label=report["attack"])
        ax.set_xlabel("confidence threshold")
        ax.set_ylabel("objects per image")
        ax.legend()
        fig.tight_layout()
        fig.savefig(where / f"{prefix}objects_vs_threshold.png", dpi=100)
        plt.close(fig)


def _plot_matrix(table: dict, path: Path) -> None:
    plt = _pyplot()
    rows = list(table)
    cols = list(dict.fromkeys(c for r in table.values() for c in r))
    data = np.array([[np.nan if table[r].get(c) is None else table[r][c] for c in cols] for r in rows])
    fig, ax = plt.subplots(figsize=(1.2 * len(cols) + 2, 0.6 * len(rows) + 1.5))
    im = ax.imshow(data, cmap="viridis")
    ax.set_xticks(range(len(cols)), [str(c) for c in cols], rotation=30, ha="right")
    ax.set_yticks(range(len(rows)), [str(r) for r in rows])
    fig.colorbar(im, ax=ax, label="adversarial mAP (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


# -- entry point -------------------------------------------------------------

COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "transfer": cmd_transfer,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detattack", description="Adversarial attack benchmark for toy detectors")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="global seed (dataset, model init, attack RNG)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-image attacks")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--plots", action="store_true", help="also write PNG plots")
    common.add_argument("--out", help="run directory (report: output directory)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("attack", "evaluate", "transfer"):
            p.add_argument("--attack", help="attack name, overrides the config")
            p.add_argument("--model", help="model id, overrides the config")
        if name == "evaluate":
            p.add_argument("--benign", action="store_true", help="score the clean test set only")
        if name == "report":
            p.add_argument("runs", nargs="*", help="run directories to collect report.json files from")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    data = cfg.to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out and args.command != "report":
        data["out"] = args.out
    if getattr(args, "attack", None):
        if args.command == "transfer":
            data["transfer"]["attack"] = args.attack
        else:
            data["attack"]["name"] = args.attack
    if getattr(args, "model", None):
        data["attack"]["model"] = args.model
    if args.jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except ApplicabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_APPLICABILITY
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DetAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any crash maps to the runtime exit code
        logger.exception("unexpected failure")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
