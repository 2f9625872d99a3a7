"""Command-line interface: one subcommand per pipeline stage.

Every command writes its artifacts plus a ``provenance.json`` (inputs with
SHA-256 hashes, effective config, timestamp). Exit codes: 0 ok, 2 bad
configuration, 3 missing or inconsistent artifact, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, dataio, explain, metrics, trainer
from ._kernels import backend as kernel_backend
from .convnet import load_checkpoint, save_checkpoint
from .errors import ArtifactError, ConfigError, InputError, WavemorphError
from .sparsity import SelectionResult, select_subbands
from .wavelet import PATHS, build_filters, decompose, load_stack, save_stack

log = logging.getLogger("wavemorph")

EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_NUMERIC = 0, 2, 3, 4

# config-file keys -> (parser, owning section)
SYNTH_KEYS = {
    "image_size": int, "pairs": int, "blob_count": int, "artifact_amplitude": float,
    "artifact_period": int, "alpha": float, "seed": int,
}
TRAIN_KEYS = {
    "lambda": float, "epochs": int, "lr0": float, "lr_step": int, "lr_factor": float,
    "batch_size": int, "seed": int, "mode": str, "threshold": float,
    "conv_channels": lambda s: tuple(int(v) for v in str(s).split(",")),
}
OTHER_KEYS = {
    "family": str, "grid": lambda s: [float(v) for v in str(s).split(",")],
    "manifest": str, "data": str, "out": str, "split": str, "target": str,
    "run": str, "selection": str, "checkpoint": str, "stack": str, "scores": str,
}
CONFIG_KEYS = {**SYNTH_KEYS, **TRAIN_KEYS, **OTHER_KEYS}


def read_config(path) -> dict:
    """Parse a key=value file; unknown keys and unparsable values are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value.strip())
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}") from None
    return out


def write_config(path, values: dict) -> None:
    lines = []
    for k in sorted(values):
        v = values[k]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(i) for i in v)
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_provenance(out_dir, command, argv, config, inputs=()) -> None:
    rec = {
        "command": command,
        "argv": list(argv),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in config.items()},
        "inputs": {str(p): sha256(p) for p in inputs if Path(p).is_file()},
        "kernel_backend": kernel_backend.NAME,
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (Path(out_dir) / "provenance.json").write_text(json.dumps(rec, indent=2) + "\n")


def prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ArtifactError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def merged(args, cfg: dict, key: str, default=None):
    """CLI flag beats config file beats default."""
    val = getattr(args, key.replace("lambda", "lam"), None)
    if val is not None:
        return val
    return cfg.get(key, default)


def train_config(args, cfg) -> trainer.TrainConfig:
    d = trainer.TrainConfig()
    return trainer.TrainConfig(
        lam=merged(args, cfg, "lambda", d.lam),
        epochs=merged(args, cfg, "epochs", d.epochs),
        lr0=merged(args, cfg, "lr0", d.lr0),
        lr_step=merged(args, cfg, "lr_step", d.lr_step),
        lr_factor=merged(args, cfg, "lr_factor", d.lr_factor),
        batch_size=merged(args, cfg, "batch_size", d.batch_size),
        seed=merged(args, cfg, "seed", d.seed),
        mode=merged(args, cfg, "mode", d.mode),
        threshold=merged(args, cfg, "threshold", d.threshold),
        conv_channels=tuple(merged(args, cfg, "conv_channels", d.conv_channels)),
    )


def train_config_dict(tc: trainer.TrainConfig) -> dict:
    d = asdict(tc)
    d["lambda"] = d.pop("lam")
    return d


def required(args, cfg, key):
    val = merged(args, cfg, key)
    if val is None:
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    return val


# ------------------------------------------------------------------ commands


def cmd_synth(args, cfg):
    d = dataio.SynthConfig()
    sc = dataio.SynthConfig(
        image_size=merged(args, cfg, "image_size", d.image_size),
        n_pairs=merged(args, cfg, "pairs", d.n_pairs),
        blob_count=merged(args, cfg, "blob_count", d.blob_count),
        artifact_amplitude=merged(args, cfg, "artifact_amplitude", d.artifact_amplitude),
        artifact_period=merged(args, cfg, "artifact_period", d.artifact_period),
        alpha=merged(args, cfg, "alpha", d.alpha),
        seed=merged(args, cfg, "seed", d.seed),
    )
    out = prepare_out(required(args, cfg, "out"), args.force)
    res = dataio.synth_dataset(sc, out)
    counts = res.manifest.counts()
    (out / "synth.json").write_text(json.dumps(
        {"config": asdict(sc), "clamp_fraction": res.clamp_fraction,
         "counts": {s: {"bonafide": c[0], "morph": c[1]} for s, c in counts.items()}}, indent=2) + "\n")
    write_provenance(out, "synth", args.argv, asdict(sc))
    log.info("wrote %d images to %s (clamped fraction %.4g)", len(res.manifest), out, res.clamp_fraction)


def cmd_decompose(args, cfg):
    manifest_path = Path(required(args, cfg, "manifest"))
    family = merged(args, cfg, "family", "haar")
    size = merged(args, cfg, "image_size", 64)
    spec = build_filters(family)
    manifest = dataio.DatasetManifest.load(manifest_path)
    manifest.check_trainable(splits=[s for s in dataio.SPLITS if manifest.split(s)])
    out = prepare_out(required(args, cfg, "out"), args.force)
    (out / "stacks").mkdir(exist_ok=True)
    lines = []
    for e in manifest.entries:
        img = dataio.load_image(dataio.resolve(manifest_path, e), size)
        name = e.path.replace("/", "__").replace("\\", "__").rsplit(".", 1)[0] + ".sbs"
        save_stack(decompose(img, spec), out / "stacks" / name)
        lines.append(json.dumps({"path": f"stacks/{name}", "label": e.label, "split": e.split, "source": e.path}))
    (out / "index.jsonl").write_text("\n".join(lines) + "\n")
    (out / "decompose.json").write_text(json.dumps(
        {"family": spec.family.value, "image_size": size, "channels": len(PATHS),
         "paths": [str(p) for p in PATHS]}, indent=2) + "\n")
    write_provenance(out, "decompose", args.argv, {"family": family, "image_size": size}, [manifest_path])


def _write_train_outputs(out, report: trainer.TrainReport, tc, phase, args, inputs):
    write_config(out / "config.txt", {**train_config_dict(tc), "phase": phase})
    save_checkpoint(out / f"{phase}.ckpt", report.params, report.model_cfg,
                    {"phase": phase, "lambda": tc.lam, "mode": tc.mode})
    (out / "report.json").write_text(json.dumps(report.summary(), indent=2) + "\n")
    write_provenance(out, phase, args.argv, train_config_dict(tc), inputs)


def cmd_train(args, cfg):
    data_dir = Path(required(args, cfg, "data"))
    tc = train_config(args, cfg)
    data = dataio.load_decomposed(data_dir)
    out = prepare_out(required(args, cfg, "out"), args.force)
    report = trainer.train_phase1(data, tc)
    _write_train_outputs(out, report, tc, "phase1", args, [data_dir / "index.jsonl"])
    log.info("phase 1 done: val AUC %.4f", report.val_auc)


def cmd_sweep(args, cfg):
    data_dir = Path(required(args, cfg, "data"))
    tc = train_config(args, cfg)
    grid = merged(args, cfg, "grid", list(trainer.DEFAULT_GRID))
    data = dataio.load_decomposed(data_dir)
    out = prepare_out(required(args, cfg, "out"), args.force)
    result = trainer.sweep_lambda(data, grid, tc)
    for lam, rep in result.reports.items():
        sub = out / f"lambda_{lam:g}"
        sub.mkdir()
        _write_train_outputs(sub, rep, replace(tc, lam=lam), "phase1", args, [data_dir / "index.jsonl"])
    (out / "sweep.json").write_text(json.dumps(result.summary(), indent=2) + "\n")
    write_config(out / "config.txt", {**train_config_dict(tc), "grid": grid})
    write_provenance(out, "sweep", args.argv, {**train_config_dict(tc), "grid": grid}, [data_dir / "index.jsonl"])
    log.info("best lambda %g", result.best_lambda)


def cmd_select(args, cfg):
    run = Path(required(args, cfg, "run"))
    ckpt = run / "phase1.ckpt"
    params, mcfg, meta = load_checkpoint(ckpt)
    threshold = merged(args, cfg, "threshold", 1e-3)
    target = run / "selection.json"
    if target.exists() and not args.force:
        raise ArtifactError(f"{target} exists (use --force to overwrite)")
    sel = select_subbands(params["conv1.w"], float(meta.get("lambda", "nan")), threshold,
                          [PATHS[i] for i in mcfg.bands], meta.get("mode", "proximal"))
    sel.save(target)
    write_provenance(run, "select", args.argv, {"threshold": threshold}, [ckpt])
    log.info("selected %d sub-bands: %s", len(sel.selected), [str(p) for p in sel.paths])


def cmd_retrain(args, cfg):
    data_dir = Path(required(args, cfg, "data"))
    sel = SelectionResult.load(required(args, cfg, "selection"))
    tc = train_config(args, cfg)
    data = dataio.load_decomposed(data_dir)
    if len(sel.norms) != data.x.shape[1]:
        raise ArtifactError(f"selection covers {len(sel.norms)} channels but the stacks have {data.x.shape[1]}")
    out = prepare_out(required(args, cfg, "out"), args.force)
    tc = replace(tc, lam=0.0)
    report = trainer.train_phase2(data, sel, tc)
    _write_train_outputs(out, report, tc, "phase2", args,
                         [data_dir / "index.jsonl", Path(required(args, cfg, "selection"))])
    log.info("phase 2 done: val AUC %.4f", report.val_auc)


def _scores_csv(path, names, labels, scores):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "label", "score"])
        for n, y, s in zip(names, labels, scores):
            w.writerow([n, int(y), repr(float(s))])


def _read_scores_csv(path) -> metrics.ScoreSet:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"scores file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return metrics.ScoreSet([float(r["score"]) for r in rows], [int(r["label"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"{path}: malformed scores ({exc})") from None


def cmd_eval(args, cfg):
    data_dir = Path(required(args, cfg, "data"))
    ckpt = Path(required(args, cfg, "checkpoint"))
    split = merged(args, cfg, "split", "test")
    params, mcfg, _ = load_checkpoint(ckpt)
    data = dataio.load_decomposed(data_dir)
    if max(mcfg.bands) >= data.x.shape[1]:
        raise ArtifactError(f"checkpoint expects bands {list(mcfg.bands)} but stacks have {data.x.shape[1]} channels")
    part = data.subset(split)
    if len(part) == 0:
        raise ArtifactError(f"split {split!r} is empty in {data_dir}")
    if list(mcfg.bands) != list(range(data.x.shape[1])):
        part = part.channels(mcfg.bands)
    out = prepare_out(required(args, cfg, "out"), args.force)
    scores = trainer.score(params, part)
    ss = metrics.ScoreSet(scores, part.labels)
    rec = metrics.report(ss)
    rec["split"] = split
    rec["channel_indices"] = list(mcfg.bands)
    (out / "report.json").write_text(metrics.dumps_report(rec) + "\n")
    metrics.det_curve(ss).to_csv(out / "det.csv")
    _scores_csv(out / "scores.csv", part.names, part.labels, scores)
    if args.embeddings:
        emb = explain.extract_embeddings(params, part.x)
        explain.save_embeddings_csv(out / "embeddings.csv", emb, part.labels)
    write_provenance(out, "eval", args.argv, {"split": split}, [ckpt, data_dir / "index.jsonl"])
    log.info("D-EER %.4f  AUC %.4f", rec["d_eer"], rec["auc"])


def cmd_gradcam(args, cfg):
    ckpt = Path(required(args, cfg, "checkpoint"))
    stack_path = Path(required(args, cfg, "stack"))
    target = merged(args, cfg, "target", "morph")
    params, mcfg, _ = load_checkpoint(ckpt)
    stack = load_stack(stack_path)
    if max(mcfg.bands) >= stack.n_channels:
        raise ArtifactError(f"checkpoint expects bands {list(mcfg.bands)}; stack has {stack.n_channels} channels")
    if stack.n_channels != mcfg.in_channels:
        stack = stack.select(mcfg.bands)
    out = prepare_out(required(args, cfg, "out"), args.force)
    cam, inter = explain.grad_cam(params, stack, target)
    if args.image:
        base = dataio.load_image(args.image, None)
        if base.shape != stack.source_size:
            base = dataio.resize_bilinear(base, *stack.source_size)
    else:
        base = np.zeros(stack.source_size)
    explain.render_cam(cam, base, out / "overlay.pgm", out / "cam.csv")
    np.savetxt(out / "alpha.csv", inter.alpha, delimiter=",", fmt="%.17g")
    write_provenance(out, "gradcam", args.argv, {"target": target},
                     [ckpt, stack_path] + ([Path(args.image)] if args.image else []))


def cmd_export_det(args, cfg):
    ss = _read_scores_csv(required(args, cfg, "scores"))
    out = Path(required(args, cfg, "out"))
    if out.exists() and not args.force:
        raise ArtifactError(f"{out} exists (use --force to overwrite)")
    metrics.det_curve(ss).to_csv(out)


# ------------------------------------------------------------------ parser


def _train_flags(p):
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--lr-step", dest="lr_step", type=int)
    p.add_argument("--lr-factor", dest="lr_factor", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=trainer.MODES)
    p.add_argument("--threshold", type=float)
    p.add_argument("--conv-channels", dest="conv_channels", type=TRAIN_KEYS["conv_channels"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavemorph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value file; flags override it")
        p.add_argument("--force", action="store_true", help="allow overwriting existing outputs")
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a synthetic bona fide / morph dataset")
    p.add_argument("--out")
    p.add_argument("--pairs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--blob-count", dest="blob_count", type=int)
    p.add_argument("--artifact-amplitude", dest="artifact_amplitude", type=float)
    p.add_argument("--artifact-period", dest="artifact_period", type=int)
    p.add_argument("--alpha", type=float)

    p = command("decompose", cmd_decompose, "decompose manifest images into 48-band stacks")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--family", choices=["haar", "db2"])
    p.add_argument("--image-size", dest="image_size", type=int)

    p = command("train", cmd_train, "phase 1: group-sparse training at one lambda")
    p.add_argument("--data")
    p.add_argument("--out")
    _train_flags(p)

    p = command("sweep", cmd_sweep, "phase 1 over a lambda grid; best by validation AUC")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--grid", type=OTHER_KEYS["grid"])
    _train_flags(p)

    p = command("select", cmd_select, "threshold conv1 group norms of a phase-1 run")
    p.add_argument("--run")
    p.add_argument("--threshold", type=float)

    p = command("retrain", cmd_retrain, "phase 2: retrain on the selected sub-bands")
    p.add_argument("--data")
    p.add_argument("--selection")
    p.add_argument("--out")
    _train_flags(p)

    p = command("eval", cmd_eval, "score a split and write detection metrics")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--split", choices=dataio.SPLITS)
    p.add_argument("--embeddings", action="store_true", help="also export penultimate features")

    p = command("gradcam", cmd_gradcam, "Grad-CAM map for one stack file")
    p.add_argument("--checkpoint")
    p.add_argument("--stack")
    p.add_argument("--image", help="base image for the overlay")
    p.add_argument("--target", choices=explain.TARGETS)
    p.add_argument("--out")

    p = command("export-det", cmd_export_det, "DET curve CSV from a scores CSV")
    p.add_argument("--scores")
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = read_config(args.config) if args.config else {}
        args.func(args, cfg)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WavemorphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
