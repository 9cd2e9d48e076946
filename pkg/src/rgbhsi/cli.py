"""Command-line entry point: ``rgbhsi <subcommand> ...``.

Subcommands: synth, preprocess, pca-fit, pca-apply, transfer, evaluate, report.
Every run writes ``run_manifest.json`` (artifacts + resolved config) into its
output directory. JSON outputs carry no timestamps or absolute paths, so an
identical invocation reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .errors import ConfigError, RgbHsiError
from .geometry import AffineTransform
from .imaging import PreprocessConfig, preprocess, rasterize_annotations
from .io import dump_json, load_manifest, read_annotations, read_envi, read_png, write_mask
from .matching import FileMatcher, LabelOracleMatcher, MatcherConfig
from .metrics import EvalReport, evaluate_dataset, render_table
from .spectral import DEFAULT_SAMPLE_CAP, PcaModel, pca_apply, pca_fit
from .synth import SceneConfig, write_dataset
from .transfer import TransferConfig, manual_alignment, prealignment, transfer_mask

log = logging.getLogger("rgbhsi")

CONFIG_VERSION = 1
OUTPUT_ROOT_ENV = "RGBHSI_OUTPUT_ROOT"

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "synth": {"scenes": 100, "projective": False},
    "preprocess": {"target_size": [256, 256]},
    "pca": {"k": 3, "sample_cap": DEFAULT_SAMPLE_CAP, "split": "train"},
    "transfer": {
        "matcher": "ncc",
        "points_per_contour": None,
        "min_matches": 4,
        "min_area": 9,
        "fallback": "keep_resized_original",
        "matcher_cfg": asdict(MatcherConfig()),
        "fit": {"use_ransac": False, "ransac_iters": 500, "inlier_px": 3.0, "seed": 0, "det_floor": 1e-3},
        "snap_radius": 2.0,
    },
}


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: Optional[str]) -> dict:
    if not path:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config schema version {doc.get('version')!r} not recognised (expected {CONFIG_VERSION})")
    return _merge(DEFAULT_CONFIG, doc)


def resolve_out(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_run_manifest(out: Path, command: str, config: dict, artifacts, summary: dict) -> None:
    rel = sorted({Path(a).resolve().relative_to(out.resolve()).as_posix() for a in artifacts})
    dump_json(
        {"tool": "rgbhsi", "version": __version__, "command": command, "config": config, "artifacts": rel, "summary": summary},
        out / "run_manifest.json",
    )


def run_samples(fn: Callable, jobs: list, n_workers: int):
    """Apply ``fn`` to each job; returns results in job order. Errors are
    returned as ``("error", message)`` instead of raised."""
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(_safe_call, [fn] * len(jobs), jobs))
    return [_safe_call(fn, j) for j in jobs]


def _safe_call(fn, job):
    try:
        return ("ok", fn(job))
    except (RgbHsiError, OSError, ValueError, KeyError) as e:
        return ("error", f"{type(e).__name__}: {e}")


def _summarise(ids, results):
    failures = [{"id": sid, "error": r[1]} for sid, r in zip(ids, results) if r[0] == "error"]
    return {"samples": len(ids), "succeeded": len(ids) - len(failures), "failed": len(failures), "failures": failures}


def _exit_code(summary) -> int:
    return 1 if summary["samples"] and summary["succeeded"] == 0 else 0


# ----------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg) -> int:
    out = resolve_out(args.out)
    scfg = SceneConfig(projective=bool(cfg["synth"].get("projective", False)))
    manifest = write_dataset(out, int(cfg["synth"]["scenes"]), int(cfg["seed"]), scfg)
    artifacts = [p for p in out.rglob("*") if p.is_file() and p.name != "run_manifest.json"]
    write_run_manifest(out, "synth", cfg, artifacts, {"scenes": int(cfg["synth"]["scenes"]), "manifest": manifest.name})
    print(f"wrote {cfg['synth']['scenes']} scenes to {out}")
    return 0


def _preprocess_job(job):
    rec, pcfg, out = job
    rgb = read_png(rec["rgb"])
    cube = read_envi(rec["cube"])
    mask = None
    if rec.get("annotation"):
        mask = rasterize_annotations(read_annotations(rec["annotation"]), rgb.size)
    r, c, m = preprocess(rgb, cube, mask, pcfg)
    paths = [Path(out) / f"{rec['id']}.rgb.npy", Path(out) / f"{rec['id']}.cube.npy"]
    np.save(paths[0], r.data.astype(np.float32))
    np.save(paths[1], c.data.astype(np.float32))
    if m is not None:
        paths.append(Path(out) / f"{rec['id']}.mask.png")
        write_mask(paths[-1], m)
        paths.append(paths[-1].with_name(f"{rec['id']}.mask.instances.json"))
    return [str(p) for p in paths]


def _manifest_samples(manifest, split: Optional[str]):
    return manifest.samples if not split else manifest.split(split)


_PATH_EXTRAS = ("gt_hsi_mask", "gt_rgb_mask", "gt_transforms")


def _rec(s, root: Path) -> dict:
    # plain dict so jobs pickle cheaply for worker processes
    return {
        "id": s.id,
        "rgb": str(s.rgb_path),
        "cube": str(s.cube_path),
        "annotation": str(s.annotation_path) if s.annotation_path else None,
        "extra": {k: (str(root / v) if k in _PATH_EXTRAS else v) for k, v in s.extra.items()},
    }


def cmd_preprocess(args, cfg) -> int:
    manifest = load_manifest(args.manifest)
    out = resolve_out(args.out)
    pcfg = PreprocessConfig(
        rgb_crop=manifest.rgb_crop, cube_crop=manifest.cube_crop, target_size=tuple(cfg["preprocess"]["target_size"])
    )
    samples = _manifest_samples(manifest, args.split)
    results = run_samples(_preprocess_job, [(_rec(s, manifest.root), pcfg, str(out)) for s in samples], args.jobs)
    summary = _summarise([s.id for s in samples], results)
    artifacts = [p for r in results if r[0] == "ok" for p in r[1]]
    write_run_manifest(out, "preprocess", cfg, artifacts, summary)
    return _exit_code(summary)


def _cube_pixels_job(job):
    rec, pcfg, quota, seed = job
    rgb = read_png(rec["rgb"])
    _, cube, _ = preprocess(rgb, read_envi(rec["cube"]), None, pcfg)
    px = cube.data.reshape(-1, cube.bands)
    if quota < len(px):
        rng = np.random.default_rng([seed, int.from_bytes(rec["id"].encode()[:8].ljust(8, b"\0"), "little")])
        px = px[np.sort(rng.choice(len(px), quota, replace=False))]
    return px


def cmd_pca_fit(args, cfg) -> int:
    manifest = load_manifest(args.manifest)
    pc = cfg["pca"]
    samples = _manifest_samples(manifest, pc.get("split"))
    if not samples:
        raise CliError(f"no samples in split {pc.get('split')!r}", 1)
    pcfg = PreprocessConfig(
        rgb_crop=manifest.rgb_crop, cube_crop=manifest.cube_crop, target_size=tuple(cfg["preprocess"]["target_size"])
    )
    cap = pc.get("sample_cap") or 10**12
    quota = int(np.ceil(cap / len(samples)))
    results = run_samples(_cube_pixels_job, [(_rec(s, manifest.root), pcfg, quota, int(cfg["seed"])) for s in samples], args.jobs)
    summary = _summarise([s.id for s in samples], results)
    chunks = [r[1] for r in results if r[0] == "ok"]
    if not chunks:
        raise CliError("no readable training cubes", 1)
    model = pca_fit(np.concatenate(chunks), int(pc["k"]), seed=int(cfg["seed"]), sample_cap=pc.get("sample_cap"))
    out_path = Path(args.out)
    if os.environ.get(OUTPUT_ROOT_ENV) and not out_path.is_absolute():
        out_path = Path(os.environ[OUTPUT_ROOT_ENV]) / out_path
    out_path.parent.mkdir(parents=True, exist_ok=True)
    model.save(out_path)
    summary["explained_variance_ratio"] = model.explained_variance_ratio.tolist()
    summary["explained_variance_total"] = float(model.explained_variance_ratio.sum())
    write_run_manifest(out_path.parent, "pca-fit", cfg, [out_path], summary)
    print(f"k={model.k} explained variance {summary['explained_variance_total']:.4f}")
    return 0


def _pca_apply_job(job):
    rec, pcfg, model_doc, out = job
    model = PcaModel.from_json(model_doc)
    _, cube, _ = preprocess(read_png(rec["rgb"]), read_envi(rec["cube"]), None, pcfg)
    path = Path(out) / f"{rec['id']}.pca.npy"
    np.save(path, pca_apply(cube, model).data.astype(np.float32))
    return [str(path)]


def cmd_pca_apply(args, cfg) -> int:
    manifest = load_manifest(args.manifest)
    model = PcaModel.load(args.model)
    out = resolve_out(args.out)
    pcfg = PreprocessConfig(
        rgb_crop=manifest.rgb_crop, cube_crop=manifest.cube_crop, target_size=tuple(cfg["preprocess"]["target_size"])
    )
    samples = _manifest_samples(manifest, args.split)
    results = run_samples(_pca_apply_job, [(_rec(s, manifest.root), pcfg, model.to_json(), str(out)) for s in samples], args.jobs)
    summary = _summarise([s.id for s in samples], results)
    write_run_manifest(out, "pca-apply", cfg, [p for r in results if r[0] == "ok" for p in r[1]], summary)
    return _exit_code(summary)


def transfer_config(tc: dict) -> TransferConfig:
    fields = {k: v for k, v in tc.items() if k not in ("snap_radius", "matches_file")}
    return TransferConfig(**fields)


def _transfer_job(job):
    rec, tc, crops, out = job
    rgb = read_png(rec["rgb"])
    cube = read_envi(rec["cube"])
    if not rec.get("annotation"):
        raise ValueError("sample has no annotation")
    mask = rasterize_annotations(read_annotations(rec["annotation"]), rgb.size)
    init = prealignment(rgb.size, cube.size, crops[0], crops[1])
    method = tc["matcher"]
    if method == "ma":
        result = manual_alignment(mask, cube.size, crops[0], crops[1])
        report = {"method": "ma", "components": [], "totals": {}}
    else:
        cfg = transfer_config(tc)
        matcher = None
        if method == "oracle":
            gt_path = rec["extra"].get("gt_transforms")
            if not gt_path:
                raise ValueError("oracle matcher needs a gt_transforms entry in the manifest")
            doc = json.loads(Path(gt_path).read_text())
            tf = {int(k): AffineTransform.from_json(v["transform"]) for k, v in doc["objects"].items()}
            matcher = LabelOracleMatcher(mask.instance_ids, tf)
        elif method == "file":
            matcher = FileMatcher(tc["matches_file"], rec["id"], snap_radius=float(tc.get("snap_radius", 2.0)))
        elif method != "ncc":
            raise ValueError(f"unknown matcher {method!r}")
        result, rep = transfer_mask(rgb, cube, mask, cfg, matcher=matcher, init=init)
        report = dict(rep.to_json(), method=method)
    report["id"] = rec["id"]
    mask_path = Path(out) / f"{rec['id']}.png"
    side = write_mask(mask_path, result)
    rep_path = Path(out) / f"{rec['id']}.report.json"
    dump_json(report, rep_path)
    return [str(mask_path), str(side), str(rep_path)]


def cmd_transfer(args, cfg) -> int:
    manifest = load_manifest(args.manifest)
    out = resolve_out(args.out)
    tc = dict(cfg["transfer"])
    if args.matcher:
        tc["matcher"] = args.matcher
    if tc["matcher"] == "file":
        if not args.matches:
            raise CliError("--matcher file requires --matches FILE")
        tc["matches_file"] = str(Path(args.matches).resolve())
    cfg = dict(cfg, transfer=tc)
    samples = _manifest_samples(manifest, args.split)
    jobs = [(_rec(s, manifest.root), tc, (manifest.rgb_crop, manifest.cube_crop), str(out)) for s in samples]
    results = run_samples(_transfer_job, jobs, args.jobs)
    summary = _summarise([s.id for s in samples], results)
    artifacts = [p for r in results if r[0] == "ok" for p in r[1]]
    resolved = copy.deepcopy(cfg)
    if "matches_file" in resolved["transfer"]:
        resolved["transfer"]["matches_file"] = Path(resolved["transfer"]["matches_file"]).name
    write_run_manifest(out, "transfer", resolved, artifacts, summary)
    print(f"transferred {summary['succeeded']}/{summary['samples']} samples ({tc['matcher']})")
    return _exit_code(summary)


def cmd_evaluate(args, cfg) -> int:
    ids = None
    if args.manifest:
        ids = [s.id for s in _manifest_samples(load_manifest(args.manifest), args.split)]
    method = args.method or Path(args.pred).name
    report = evaluate_dataset(args.pred, args.gt, ids, method=method)
    doc = report.to_json()
    if args.out:
        out = resolve_out(args.out)
        dump_json(doc, out / "eval.json")
        (out / "eval.txt").write_text(report.to_table())
        write_run_manifest(
            out, "evaluate", dict(cfg, method=method), [out / "eval.json", out / "eval.txt"],
            {"miou": report.miou, "skip_count": len(report.skipped)},
        )
    if args.format == "json":
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(report.to_table(), end="")
        if report.skipped:
            print(f"skipped {len(report.skipped)} samples without predictions")
    return 0 if report.per_sample or not (ids or report.skipped) else 1


def cmd_report(args, cfg) -> int:
    rows = []
    classes = None
    for path in args.inputs:
        doc = json.loads(Path(path).read_text())
        if "schema" in doc:
            rep = EvalReport.from_json(doc)
            rows.append((rep.method, rep.iou, rep.miou))
            classes = classes or rep.classes
        else:
            # stored per-class rows: {"method": .., "iou": {class_id: value}, "miou": ..}
            iou = {int(k): v for k, v in doc["iou"].items()}
            rows.append((doc["method"], iou, doc.get("miou")))
            classes = classes or tuple(sorted(iou))
    table = render_table(rows, classes, percent=not args.percent_input)
    if args.format == "json":
        print(json.dumps([{"method": m, "iou": {str(c): v for c, v in i.items()}, "miou": mi} for m, i, mi in rows], indent=2, sort_keys=True))
    else:
        print(table, end="")
    if args.out:
        out = resolve_out(args.out)
        (out / "report.txt").write_text(table)
        write_run_manifest(out, "report", cfg, [out / "report.txt"], {"rows": len(rows)})
    return 0


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgbhsi", description="RGB/HSI label transfer, PCA and evaluation tools")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="versioned JSON config file")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic benchmark dataset")
    s.add_argument("--scenes", type=int)
    s.add_argument("--projective", action="store_true", help="projective per-object distortion")
    s.add_argument("--out", required=True)

    s = sub.add_parser("preprocess", parents=[common], help="crop, resize and normalise samples")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=["train", "val", "test"])
    s.add_argument("--target-size", type=int, nargs=2, metavar=("W", "H"))

    s = sub.add_parser("pca-fit", parents=[common], help="fit a PCA model on training cubes")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="model JSON path")
    s.add_argument("--k", type=int)
    s.add_argument("--sample-cap", type=int)
    s.add_argument("--split", choices=["train", "val", "test"])

    s = sub.add_parser("pca-apply", parents=[common], help="project cubes with a fitted model")
    s.add_argument("--manifest", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=["train", "val", "test"])

    s = sub.add_parser("transfer", parents=[common], help="transfer RGB annotations into the HSI frame")
    s.add_argument("--manifest", required=True)
    s.add_argument("--matcher", choices=["ncc", "file", "oracle", "ma"])
    s.add_argument("--matches", help="JSON-lines correspondence file for --matcher file")
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=["train", "val", "test"])

    s = sub.add_parser("evaluate", parents=[common], help="score predicted masks against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--manifest")
    s.add_argument("--split", choices=["train", "val", "test"])
    s.add_argument("--method", help="row label (default: prediction directory name)")
    s.add_argument("--format", choices=["table", "json"], default="table")
    s.add_argument("--out")

    s = sub.add_parser("report", parents=[common], help="render stored results as one table")
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--percent-input", action="store_true", help="stored values are already percentages")
    s.add_argument("--format", choices=["table", "json"], default="table")
    s.add_argument("--out")
    return p


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "pca-fit": cmd_pca_fit,
    "pca-apply": cmd_pca_apply,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _apply_overrides(args, cfg: dict) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.command == "synth":
        if args.scenes is not None:
            cfg["synth"]["scenes"] = args.scenes
        if args.projective:
            cfg["synth"]["projective"] = True
    if getattr(args, "target_size", None):
        cfg["preprocess"]["target_size"] = list(args.target_size)
    if args.command == "pca-fit":
        if args.k is not None:
            cfg["pca"]["k"] = args.k
        if args.sample_cap is not None:
            cfg["pca"]["sample_cap"] = args.sample_cap
        if args.split:
            cfg["pca"]["split"] = args.split
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(args, load_config(args.config))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(json.dumps({"error": "config", "message": str(e)}), file=sys.stderr)
        return 2
    except CliError as e:
        print(json.dumps({"error": "usage" if e.code == 2 else "data", "message": str(e)}), file=sys.stderr)
        return e.code
    except (RgbHsiError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
