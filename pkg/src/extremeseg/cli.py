"""Command-line entry point: ``extremeseg <command> ...``.

Exit status is 0 on success, 2 for usage errors and 1 when a command fails
at run time (bad file, inconsistent inputs, numerical failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io as vio
from .annotations import simulate_extreme_points
from .geodesics import GeodesicConfig, Metric, inter_extreme_geodesics
from .metrics import EvalReport, wilcoxon_signed_rank
from .phantoms import PhantomKind, PhantomSpec, generate_dataset, load_dataset
from .trainer import Supervision, TrainConfig, forward_array, init_state, train
from .volume import gradient_magnitude, normalize_intensity

log = logging.getLogger("extremeseg")

THRESHOLD = 0.5


class UsageError(Exception):
    """Arguments parsed but are inconsistent with each other."""


def _load_config_arg(text: str) -> dict:
    if text.lstrip().startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise UsageError(f"--config: malformed JSON at offset {e.pos}: {e.msg}") from e
    else:
        d = vio._parse_json(Path(text))
    if not isinstance(d, dict):
        raise UsageError("--config must hold a JSON object")
    return d


def cmd_synth(args) -> None:
    spec = PhantomSpec(shape=tuple(args.shape), spacing=tuple(args.spacing), kind=PhantomKind(args.kind),
                       noise_sd=args.noise_sd, distractor_contrast=args.distractor_contrast)
    manifest = generate_dataset(args.out, args.n_train, args.n_val, args.n_test, spec, seed=args.seed)
    log.info("wrote %d cases to %s", len(manifest["cases"]), args.out)


def cmd_points(args) -> None:
    gt = vio.read_volume(args.gt)
    try:
        pts = simulate_extreme_points(gt, seed=args.seed)
    except ValueError as e:
        raise ValueError(f"{args.gt}: {e}") from e
    vio.write_points(args.out, pts)


def cmd_geodesic(args) -> None:
    mode = Metric(args.mode)
    if mode is Metric.DEEP and args.prob is None:
        raise UsageError("--prob is required with --mode deep")
    if args.out_mask and vio._paths(args.out_mask)[0].resolve() == Path(args.out_json).resolve():
        raise UsageError("--out-mask header would overwrite --out-json")
    X = vio.read_volume(args.image)
    pts = vio.read_points(args.points)
    prob = vio.read_volume(args.prob) if args.prob is not None else None
    if prob is not None and prob.shape != X.shape:
        raise ValueError(f"{args.prob}: shape {prob.shape} does not match image {X.shape}")
    pts.check_inside(X.shape)
    X = normalize_intensity(X)
    cfg = GeodesicConfig(mode, connectivity=args.connectivity)
    geo = inter_extreme_geodesics(cfg, X, gradient_magnitude(X), prob, pts)
    doc = {"mode": mode.value, "connectivity": args.connectivity, "paths": {}}
    for axis, path in zip("xyz", geo.paths):
        doc["paths"][axis] = {"total_length": path.total_length, "voxels": [list(v) for v in path.voxels]}
    Path(args.out_json).write_text(vio.dump_json(doc), encoding="utf-8")
    if args.out_mask:
        vio.write_volume(args.out_mask, X.like(geo.mask(X.shape)))


def _split(root, split):
    return [(case, X, pts) for case, X, _gt, pts in load_dataset(root) if case["split"] == split]


def cmd_train(args) -> None:
    cfg = TrainConfig()
    if args.config:
        cfg = TrainConfig.from_dict(_load_config_arg(args.config), base=cfg)
    overrides = {k: v for k, v in (("supervision", args.supervision), ("seed", args.seed),
                                    ("iterations", args.iterations), ("geodesic_mode", args.geodesic_mode))
                 if v is not None}
    cfg = TrainConfig.from_dict(overrides, base=cfg)
    train_set = [(X, pts) for _c, X, pts in _split(args.data, "train")]
    val_set = [(X, pts) for _c, X, pts in _split(args.data, "val")]
    if not train_set or not val_set:
        raise ValueError(f"{args.data}: dataset needs at least one train and one val case")
    state = init_state(cfg)
    model = train(train_set, val_set, cfg, state=state)
    vio.write_checkpoint(args.out, model, cfg, best_val_loss=state.best_val_loss)


def cmd_predict(args) -> None:
    model, _cfg = vio.read_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.image:
        items = [(Path(args.image).with_suffix("").name, vio.read_volume(args.image))]
    else:
        items = [(case["case_id"], X) for case, X, _pts in _split(args.data, args.split)]
    for name, X in items:
        prob = forward_array(model, normalize_intensity(X))
        vio.write_volume(out / f"{name}_prob", X.like(prob))
        vio.write_volume(out / f"{name}_mask", X.like(prob > THRESHOLD))


def _report(pred_dir, data, split) -> EvalReport:
    report = EvalReport()
    for case, _X, gt, _pts in load_dataset(data):
        if case["split"] != split:
            continue
        pred = vio.read_volume(Path(pred_dir) / f"{case['case_id']}_mask")
        if pred.shape != gt.shape:
            raise ValueError(f"{pred_dir}: prediction for {case['case_id']} has shape {pred.shape}, gt {gt.shape}")
        report.add(case["case_id"], pred.data, gt.data, gt.spacing)
    return report


def cmd_eval(args) -> None:
    if args.gt:
        if args.compare:
            raise UsageError("--compare needs --data (a dataset), not --gt")
        pred, gt = vio.read_volume(args.pred), vio.read_volume(args.gt)
        if pred.shape != gt.shape:
            raise ValueError(f"{args.pred}: shape {pred.shape} does not match {args.gt} {gt.shape}")
        report = EvalReport()
        report.add(Path(args.gt).with_suffix("").name, pred.data, gt.data, gt.spacing)
    else:
        report = _report(args.pred, args.data, args.split)
    extra = {}
    if args.compare:
        other = _report(args.compare, args.data, args.split)
        test = {"metric": "dice", "a": str(args.pred), "b": str(args.compare),
                "mean_a": float(report.column("dice").mean()), "mean_b": float(other.column("dice").mean())}
        try:
            test["p_value"] = wilcoxon_signed_rank(report.column("dice"), other.column("dice"))
        except ValueError as e:
            test["p_value"], test["note"] = None, str(e)
        extra["wilcoxon"] = test
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv(), encoding="utf-8")
    text = report.to_json(extra)
    if args.out_json:
        Path(args.out_json).write_text(text, encoding="utf-8")
    if not args.out_csv and not args.out_json:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="extremeseg", description="3D segmentation from six extreme clicks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a phantom dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int, default=6)
    s.add_argument("--n-val", type=int, default=2)
    s.add_argument("--n-test", type=int, default=12)
    s.add_argument("--kind", choices=[k.value for k in PhantomKind], default=PhantomKind.BLOB_WITH_DISTRACTOR.value)
    s.add_argument("--shape", type=int, nargs=3, default=list(PhantomSpec.shape))
    s.add_argument("--spacing", type=float, nargs=3, default=list(PhantomSpec.spacing))
    s.add_argument("--noise-sd", type=float, default=PhantomSpec.noise_sd)
    s.add_argument("--distractor-contrast", type=float, default=PhantomSpec.distractor_contrast)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("points", help="simulate extreme points from a ground-truth mask")
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_points)

    s = sub.add_parser("geodesic", help="inter-extreme-point geodesics")
    s.add_argument("--image", required=True)
    s.add_argument("--points", required=True)
    s.add_argument("--mode", required=True, choices=[m.value for m in Metric])
    s.add_argument("--prob", help="foreground probability volume (required for --mode deep)")
    s.add_argument("--connectivity", type=int, choices=(6, 26), default=26)
    s.add_argument("--out-json", required=True)
    s.add_argument("--out-mask")
    s.set_defaults(func=cmd_geodesic)

    s = sub.add_parser("train", help="train a model on a generated dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--supervision", choices=[m.value for m in Supervision])
    s.add_argument("--geodesic-mode", choices=[m.value for m in Metric])
    s.add_argument("--config", help="JSON file or inline JSON object with config fields")
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="probability and thresholded mask volumes")
    s.add_argument("--checkpoint", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--image")
    s.add_argument("--split", default="test")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="Dice / HD95 / precision report")
    s.add_argument("--pred", required=True, help="prediction directory, or a mask volume with --gt")
    ref = s.add_mutually_exclusive_group(required=True)
    ref.add_argument("--data")
    ref.add_argument("--gt")
    s.add_argument("--split", default="test")
    s.add_argument("--compare", help="second prediction directory for a paired Wilcoxon test on Dice")
    s.add_argument("--out-csv")
    s.add_argument("--out-json")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError, KeyError) as e:
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
