"""Command-line entry point.

Subcommands: gen-synthetic, extract-contours, train, eval, predict, plot-pr.
Exit codes: 0 success, 1 usage/configuration, 2 data/I-O, 3 divergence.
Relative output paths are resolved under ``$MLMSAL_OUTPUT_ROOT`` when set.
"""
import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml
from PIL import Image, UnidentifiedImageError

from .errors import ConfigurationError, IngestionError, MlmsalError, ValidationError

log = logging.getLogger("mlmsal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "MLMSAL_OUTPUT_ROOT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


class CSVParseError(MlmsalError):
    exit_code = EXIT_DATA


def _out_path(p):
    p = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def write_manifest(out_dir, command, seed=None, config_path=None, config=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_path": str(config_path) if config_path else None,
        "seed": seed,
        "output_dir": str(out_dir),
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": config,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _read_yaml(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: cannot parse: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


# --------------------------------------------------------------------------
# gen-synthetic
# --------------------------------------------------------------------------

def cmd_gen_synthetic(args):
    from .data import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec.from_dict(_read_yaml(args.spec_file))
    out = _out_path(args.out_dir)
    write_manifest(out, "gen-synthetic", spec.seed, args.spec_file, spec.to_dict())
    sal, edge = generate_synthetic(spec, out)
    print(f"wrote {spec.count} saliency samples to {sal} and {spec.count} edge samples to {edge}")
    return EXIT_OK


# --------------------------------------------------------------------------
# extract-contours
# --------------------------------------------------------------------------

def cmd_extract_contours(args):
    from .data import IMAGE_SUFFIXES
    from .supervision import extract_foreground_contour

    mask_dir = Path(args.mask_dir)
    files = sorted(p for p in mask_dir.glob("*") if p.suffix.lower() in IMAGE_SUFFIXES) \
        if mask_dir.is_dir() else []
    if not files:
        raise IngestionError(f"no masks found in {mask_dir}")
    out = _out_path(args.out_dir)
    write_manifest(out, "extract-contours", config={"mask_dir": str(mask_dir)})
    written = 0
    for f in files:
        with Image.open(f) as im:
            raw = np.asarray(im.convert("L"))
        if not np.all(np.isin(raw, (0, 255))) and not np.all(np.isin(raw, (0, 1))):
            log.warning("skipping %s: mask is not binary", f.name)
            continue
        contour = extract_foreground_contour((raw > 0).astype(np.uint8))
        Image.fromarray(contour.astype(np.uint8) * 255).save(out / f"{f.stem}.png", format="PNG")
        written += 1
    if written == 0:
        raise ValidationError("every mask was skipped as non-binary")
    print(f"wrote {written} contour maps to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def default_train_document():
    from .trainer import TrainConfig

    return {
        "data": {"saliency": "data/saliency", "edge": "data/edge"},
        "output_dir": "runs/tiny",
        "train": TrainConfig().to_dict(),
    }


def _load_train_document(path):
    from .trainer import TrainConfig

    doc = _read_yaml(path)
    unknown = set(doc) - {"data", "output_dir", "train"}
    if unknown:
        raise ConfigurationError(f"{path}: unknown key(s) {sorted(unknown)}")
    data = doc.get("data") or {}
    if set(data) - {"saliency", "edge"}:
        raise ConfigurationError(f"{path}: unknown data key(s) {sorted(set(data) - {'saliency', 'edge'})}")
    base = Path(path).parent
    paths = {}
    for kind in ("saliency", "edge"):
        if kind not in data:
            raise ConfigurationError(f"{path}: data.{kind} is required")
        p = Path(data[kind])
        p = p if p.is_absolute() else base / p
        if not p.is_dir():
            raise ConfigurationError(f"dataset path {p} does not exist")
        paths[kind] = p
    config = TrainConfig.from_dict(doc.get("train") or {})
    out = doc.get("output_dir", "runs/train")
    return config, paths, out


def cmd_train(args):
    from .data import load_dataset
    from .trainer import fit

    if args.dump_config:
        sys.stdout.write(yaml.safe_dump(default_train_document(), sort_keys=False))
        return EXIT_OK
    if not args.config_file:
        raise ConfigurationError("train needs a config file (or --dump-config)")
    config, paths, out = _load_train_document(args.config_file)
    if args.max_steps is not None:
        config.max_steps = args.max_steps
    out = _out_path(args.out or out)
    write_manifest(out, "train", config.seed, args.config_file, config.to_dict())
    size = config.model.input_size
    sal = load_dataset(paths["saliency"], "saliency", size)
    edge = load_dataset(paths["edge"], "edge", size)
    state, rows = fit(config, sal, edge, out_dir=out, resume_from=args.resume)
    last = rows[-1][1]["total"] if rows else float("nan")
    print(f"trained {state.step} steps (final total loss {last:.6f}); checkpoint at {out / 'checkpoint.npz'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def evaluate_checkpoint(state, dataset_dir, task, n_thresholds=255, tolerance_px=1):
    from . import metrics
    from .data import load_dataset
    from .errors import LoadError
    from .trainer import predict_maps

    cfg = state.config
    if task == "edge" and state.model.ems is None:
        raise LoadError(f"checkpoint preset {cfg.preset} has no edge modules; cannot evaluate edges")
    records = load_dataset(dataset_dir, task, cfg.model.input_size)
    maps = [predict_maps(state.model, r.image, cfg.branch_policy, cfg.branch_index, cfg.seed)
            for r in records]
    gts = [r.target for r in records]
    report = metrics.MetricReport()
    if task == "saliency":
        preds = [m[0][0, 0].numpy().astype(np.float64) for m in maps]
        report.mean_f_beta = metrics.mean_f_measure(preds, gts)
        report.mae = metrics.mean_mae(preds, gts)
        report.s_measure = metrics.mean_s_measure(preds, gts)
        report.pr = metrics.pr_curve(preds, gts, n_thresholds)
    else:
        preds = [m[1][0, 0].numpy().astype(np.float64) for m in maps]
        bin_gts = [(g >= 0.5).astype(np.float64) for g in gts]
        report.ods, report.ois = metrics.edge_ods_ois(preds, bin_gts, tolerance_px, n_thresholds)
    return report


def cmd_eval(args):
    from . import metrics
    from .trainer import load_checkpoint

    state = load_checkpoint(args.checkpoint)
    out = _out_path(args.out)
    write_manifest(out, "eval", state.config.seed,
                   config={"checkpoint": str(args.checkpoint), "dataset": str(args.dataset_dir),
                           "task": args.task})
    report = evaluate_checkpoint(state, args.dataset_dir, args.task, args.thresholds, args.tolerance)
    if args.task == "saliency":
        items = report.saliency_items()
        report.pr.to_csv(out / "pr.csv")
    else:
        items = report.edge_items()
    metrics.write_report(items, out / "report.txt")
    for k, v in items.items():
        print(f"{k}={v:.6f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# predict
# --------------------------------------------------------------------------

def cmd_predict(args):
    from .data import IMAGE_SUFFIXES, read_image
    from .trainer import load_checkpoint, predict

    state = load_checkpoint(args.checkpoint)
    src = Path(args.input)
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    else:
        files = [src]
    if not files:
        raise IngestionError(f"no images found at {src}")
    if args.edge and state.model.ems is None:
        raise ConfigurationError("--edge requested but the checkpoint has no edge modules")
    out = _out_path(args.out_dir)
    write_manifest(out, "predict", state.config.seed,
                   config={"checkpoint": str(args.checkpoint), "input": str(src), "edge": args.edge})
    done = 0
    for f in files:
        try:
            img = read_image(f)
        except (OSError, UnidentifiedImageError) as exc:
            log.warning("skipping %s: %s", f, exc)
            continue
        maps = predict(state, img)
        Image.fromarray(np.round(255 * maps["saliency"]).astype(np.uint8)).save(
            out / f"{f.stem}.png", format="PNG")
        if args.edge:
            Image.fromarray(np.round(255 * maps["edge"]).astype(np.uint8)).save(
                out / f"{f.stem}_edge.png", format="PNG")
        done += 1
    if done == 0:
        raise IngestionError("no readable images")
    print(f"wrote {done} saliency map(s) to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# plot-pr
# --------------------------------------------------------------------------

def read_pr_csv(path):
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CSVParseError(f"{path}: empty CSV")
        if [h.strip() for h in header] != ["threshold", "precision", "recall"]:
            raise CSVParseError(f"{path}:1: expected header threshold,precision,recall")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, p, r = (float(v) for v in row)
            except ValueError:
                raise CSVParseError(f"{path}:{lineno}: malformed row {row!r}") from None
            rows.append((t, p, r))
    if not rows:
        raise CSVParseError(f"{path}: no PR points")
    return np.array(rows)


def cmd_plot_pr(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = args.label or []
    if labels and len(labels) != len(args.csv):
        raise ConfigurationError("--label must be given once per CSV")
    curves = [read_pr_csv(p) for p in args.csv]
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4), dpi=100)
    for i, (path, pts) in enumerate(zip(args.csv, curves)):
        label = labels[i] if labels else Path(path).parent.name or Path(path).stem
        ax.plot(pts[:, 2], pts[:, 1], label=label)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(out, format="png", metadata={"Software": None})
    plt.close(fig)
    print(f"wrote {out}")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="mlmsal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synthetic", help="write a synthetic saliency + edge dataset")
    g.add_argument("spec_file")
    g.add_argument("out_dir")
    g.set_defaults(func=cmd_gen_synthetic)

    c = sub.add_parser("extract-contours", help="Canny foreground contours from binary masks")
    c.add_argument("mask_dir")
    c.add_argument("out_dir")
    c.set_defaults(func=cmd_extract_contours)

    t = sub.add_parser("train", help="train from a YAML config")
    t.add_argument("config_file", nargs="?")
    t.add_argument("--dump-config", action="store_true", help="print the full default config")
    t.add_argument("--out", help="override output_dir")
    t.add_argument("--max-steps", type=int)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("checkpoint")
    e.add_argument("dataset_dir")
    e.add_argument("--task", choices=("saliency", "edge"), default="saliency")
    e.add_argument("--out", default="eval")
    e.add_argument("--thresholds", type=int, default=255)
    e.add_argument("--tolerance", type=int, default=1, help="edge match tolerance in pixels")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="write saliency (and edge) maps as PNG")
    r.add_argument("checkpoint")
    r.add_argument("input", help="image file or directory")
    r.add_argument("out_dir")
    r.add_argument("--edge", action="store_true", help="also write E* maps")
    r.set_defaults(func=cmd_predict)

    pr = sub.add_parser("plot-pr", help="plot PR curves from eval CSVs")
    pr.add_argument("csv", nargs="+")
    pr.add_argument("--out", required=True)
    pr.add_argument("--label", action="append")
    pr.set_defaults(func=cmd_plot_pr)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except MlmsalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
