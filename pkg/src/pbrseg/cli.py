"""Command-line surface: phantom generation, training, inference,
evaluation, and reporting, with reproducible run manifests."""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import checkpoint_digest
from .errors import ConfigError, DataError, NumericalError
from .hybrid import SweepConfig, binarize, infer_pbr
from .metrics import (SliceReport, dsc_histogram, evaluate_slices, evaluate_volume,
                      reliability_curve, small_target_report, summarize,
                      volume_agreement, volume_mm3, write_slice_csv,
                      write_volume_csv)
from .phantom import PhantomSpec, gen_phantom
from .preprocess import crop, preprocess
from .pvol import MaskVolume, Volume, read_pvol_file, write_pvol_file
from .training import (desk_initial_schedule, desk_primary_schedule, train_initial,
                       train_primary, write_train_log)
from .unet import UNet
from .views import VIEWS


# -- small parsing helpers --------------------------------------------------

def _dims(text: str) -> tuple:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected m,h,w got {text!r}")
    return tuple(parts)


def _crop_hw(text: str) -> tuple:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 2 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected h,w got {text!r}")
    return tuple(parts)


def _ids(text: str) -> frozenset:
    out = set()
    for part in text.split(","):
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(part))
    return frozenset(out)


def _views_arg(text: str) -> tuple:
    if text == "all":
        return VIEWS
    views = tuple(text.split(","))
    for v in views:
        if v not in VIEWS:
            raise argparse.ArgumentTypeError(f"unknown view {v!r}")
    return views


def _id_number(vid: str, fallback: int) -> int:
    m = re.search(r"(\d+)$", vid)
    return int(m.group(1)) if m else fallback


# -- dataset discovery ------------------------------------------------------

def _discover(data_dir: Path):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory {data_dir} does not exist")
    out = []
    masks = sorted(data_dir.glob("*_mask.pvol"))
    for i, mp in enumerate(masks):
        vp = mp.with_name(mp.name.replace("_mask.pvol", ".pvol"))
        if not vp.exists():
            raise DataError(f"mask {mp.name} has no matching volume file")
        out.append((vp.stem, vp, mp))
    if not out:
        raise DataError(f"no volume/mask pairs under {data_dir}")
    return out


def _load_pairs(data_dir, ids=None, crop_hw=None):
    """Preprocessed (id, volume, mask) triples, optionally filtered/cropped."""
    pairs = []
    for i, (vid, vp, mp) in enumerate(_discover(data_dir)):
        if ids is not None and _id_number(vid, i) not in ids:
            continue
        v = read_pvol_file(vp)
        m = read_pvol_file(mp)
        if not isinstance(m, MaskVolume):
            raise DataError(f"{mp} does not hold a binary mask")
        if isinstance(v, MaskVolume):
            raise DataError(f"{vp} holds a mask, expected intensities")
        v = preprocess(v)
        if crop_hw is not None:
            v, m = crop(v, m, *crop_hw)
        pairs.append((vid, v, m))
    if not pairs:
        raise DataError("id filter matched no volumes")
    return pairs


def _run_dirs(run: Path):
    run = Path(run)
    dirs = {k: run / k for k in ("checkpoints", "volumes", "reports")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _write_manifest(outdir: Path, command: str, args, digests: dict) -> None:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "config"):
            continue
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, frozenset):
            v = sorted(v)
        elif isinstance(v, tuple):
            v = list(v)
        cfg[k] = v
    manifest = {"command": command, "version": __version__, "config": cfg,
                "checkpoints": dict(sorted(digests.items()))}
    path = Path(outdir) / f"manifest_{command.replace('-', '_')}.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_init_nets(ckpt_dir: Path, views) -> dict:
    nets = {}
    for view in views:
        path = Path(ckpt_dir) / f"init_{view}.pbrw"
        if path.exists():
            nets[view] = UNet.load(path.read_bytes())
    if not nets:
        raise DataError(f"no init_<view>.pbrw checkpoints under {ckpt_dir}")
    return nets


# -- subcommands ------------------------------------------------------------

def cmd_phantom(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        seed = int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0])
        spec = PhantomSpec(seed=seed, dims=args.dims, contrast=args.contrast,
                           noise_std=args.noise, distractors=args.distractors,
                           min_radius=args.min_radius, max_radius=args.max_radius,
                           taper=args.taper)
        v, m = gen_phantom(spec)
        write_pvol_file(out / f"phantom_{i:03d}.pvol", v)
        write_pvol_file(out / f"phantom_{i:03d}_mask.pvol", m)
    _write_manifest(out, "phantom", args, {})
    return 0


def cmd_train_init(args) -> int:
    dirs = _run_dirs(args.run)
    pairs = _load_pairs(args.data, args.ids, args.crop)
    dataset = [(v, m) for _, v, m in pairs]
    schedule = desk_initial_schedule(args.sgd_epochs, args.adam_epochs,
                                     args.sgd_lr, args.adam_lr)
    schedule = schedule.__class__(schedule.phases, args.val_fraction,
                                  args.patience, 0.5, args.augment)
    digests = {}
    for view in args.views:
        net, logs = train_initial(dataset, view, schedule, args.seed, args.base_width)
        blob = net.save()
        (dirs["checkpoints"] / f"init_{view}.pbrw").write_bytes(blob)
        digests[f"init_{view}"] = checkpoint_digest(blob)
        write_train_log(logs, dirs["reports"] / f"train_init_{view}.csv")
    _write_manifest(args.run, "train-init", args, digests)
    return 0


def cmd_train_primary(args) -> int:
    dirs = _run_dirs(args.run)
    pairs = _load_pairs(args.data, args.ids, args.crop)
    dataset = [(v, m) for _, v, m in pairs]
    init_nets = {} if args.teacher_forced else _load_init_nets(dirs["checkpoints"], args.views)
    schedule = desk_primary_schedule(args.epochs, args.lr)
    schedule = schedule.__class__(schedule.phases, args.val_fraction,
                                  args.patience, 0.5, args.augment)
    net, logs = train_primary(dataset, init_nets, args.depth, schedule, args.seed,
                              teacher_forced=args.teacher_forced,
                              base_width=args.base_width)
    blob = net.save()
    path = dirs["checkpoints"] / f"primary_d{args.depth}.pbrw"
    path.write_bytes(blob)
    write_train_log(logs, dirs["reports"] / "train_primary.csv")
    _write_manifest(args.run, "train-primary", args,
                    {path.stem: checkpoint_digest(blob)})
    return 0


def cmd_infer(args) -> int:
    dirs = _run_dirs(args.run)
    init_nets = _load_init_nets(dirs["checkpoints"], args.views)
    primary_path = dirs["checkpoints"] / f"primary_d{args.depth}.pbrw"
    if not primary_path.exists():
        raise DataError(f"missing checkpoint {primary_path}")
    primary_blob = primary_path.read_bytes()
    config = SweepConfig(args.depth, args.threshold, args.sweeps, args.inclusive)
    pairs = _load_pairs(args.data, args.ids, args.crop)

    def run_one(item):
        vid, v, _ = item
        # worker-local net instances: training tapes must not be shared
        net = UNet.load(primary_blob)
        result = infer_pbr(init_nets, net, v, config)
        write_pvol_file(dirs["volumes"] / f"pred_{vid}.pvol", result.mask)
        write_pvol_file(dirs["volumes"] / f"prob_{vid}.pvol",
                        Volume(result.prob.data, result.prob.spacing))
        write_pvol_file(dirs["volumes"] / f"prob_init_{vid}.pvol",
                        Volume(result.initial.data, result.initial.spacing))
        write_pvol_file(dirs["volumes"] / f"pred_init_{vid}.pvol",
                        binarize(result.initial, args.threshold, args.inclusive))
        return vid, result.timings

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(run_one, pairs))
    else:
        results = [run_one(p) for p in pairs]

    with open(dirs["volumes"] / "timing.jsonl", "w") as f:
        for vid, timings in sorted(results):
            for stage, seconds in timings:
                f.write(json.dumps({"volume": vid, "stage": stage,
                                    "seconds": seconds}) + "\n")
    digests = {"primary": checkpoint_digest(primary_blob)}
    for view, net in init_nets.items():
        digests[f"init_{view}"] = checkpoint_digest(net.save())
    _write_manifest(args.run, "infer", args, digests)
    return 0


def _eval_set(pairs, pred_dir: Path, prefix: str):
    vol_reports, slice_reports, mm3 = [], [], {"ids": [], "pred": [], "gt": []}
    for vid, _, gt in pairs:
        pred_path = Path(pred_dir) / f"{prefix}{vid}.pvol"
        if not pred_path.exists():
            raise DataError(f"missing prediction {pred_path}")
        pred = read_pvol_file(pred_path)
        if not isinstance(pred, MaskVolume):
            raise DataError(f"{pred_path} does not hold a binary mask")
        vol_reports.append(evaluate_volume(pred, gt, volume_id=vid))
        slice_reports.extend(evaluate_slices(pred, gt, volume_id=vid))
        mm3["ids"].append(vid)
        mm3["pred"].append(volume_mm3(pred))
        mm3["gt"].append(volume_mm3(gt))
    return vol_reports, slice_reports, mm3


def cmd_eval(args) -> int:
    dirs = _run_dirs(args.run)
    pred_dir = Path(args.pred) if args.pred else dirs["volumes"]
    pairs = _load_pairs(args.data, args.ids, args.crop)
    for prefix, tag in (("pred_", ""), ("pred_init_", "_init")):
        if tag and not any((pred_dir / f"{prefix}{vid}.pvol").exists()
                           for vid, _, _ in pairs):
            continue
        vols, slices, mm3 = _eval_set(pairs, pred_dir, prefix)
        write_volume_csv(vols, dirs["reports"] / f"volumes{tag}.csv")
        write_slice_csv(slices, dirs["reports"] / f"slices{tag}.csv")
        with open(dirs["reports"] / f"summary{tag}.json", "w") as f:
            json.dump(summarize(vols), f, indent=2, sort_keys=True)
            f.write("\n")
        with open(dirs["reports"] / f"volumes_mm3{tag}.json", "w") as f:
            json.dump(mm3, f, indent=2, sort_keys=True)
            f.write("\n")
    _write_manifest(args.run, "eval", args, {})
    return 0


def _read_volumes_csv(path: Path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _read_slices_csv(path: Path):
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(SliceReport(row["volume_id"], int(row["slice_index"]),
                                   float(row["dsc"]), int(row["gt_pixels"]),
                                   row["is_head_or_tail"] == "1"))
    return out


def cmd_report(args) -> int:
    dirs = _run_dirs(args.run)
    reports = dirs["reports"]
    vol_rows = _read_volumes_csv(reports / "volumes.csv")
    slice_reports = _read_slices_csv(reports / "slices.csv")

    fg_slices = [r for r in slice_reports if r.gt_pixels > 0]
    hist = dsc_histogram(fg_slices)
    hist_out = {"edges": [list(e) for e in hist["edges"]], "counts": hist["counts"],
                "percent": hist["percent"], "total": hist["total"]}
    with open(reports / "histogram.json", "w") as f:
        json.dump(hist_out, f, indent=2, sort_keys=True)
        f.write("\n")

    curve = reliability_curve([float(r["dsc"]) for r in vol_rows])
    with open(reports / "reliability.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("threshold", "fraction"))
        for t, frac in curve:
            w.writerow((f"{t:.2f}", f"{frac:.6f}"))

    with open(reports / "volumes_mm3.json") as f:
        mm3 = json.load(f)
    agreement = volume_agreement(mm3["pred"], mm3["gt"])
    with open(reports / "agreement.json", "w") as f:
        json.dump(vars(agreement), f, indent=2, sort_keys=True)
        f.write("\n")

    small = small_target_report(slice_reports, args.area_threshold, args.head_tail_n)
    small["head_tail"]["slices"] = [list(s) for s in small["head_tail"]["slices"]]
    small["small"]["slices"] = [list(s) for s in small["small"]["slices"]]
    with open(reports / "small_targets.json", "w") as f:
        json.dump(small, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(args.run, "report", args, {})
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbrseg",
                                     description="probabilistic-map guided "
                                                 "recurrent volume segmentation")
    parser.add_argument("--config", type=Path, default=None,
                        help="flat key=value file; command-line flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_dims, default=(32, 64, 64))
    p.add_argument("--contrast", type=float, default=90.0)
    p.add_argument("--noise", type=float, default=18.0)
    p.add_argument("--distractors", type=int, default=3)
    p.add_argument("--min-radius", type=float, default=1.6)
    p.add_argument("--max-radius", type=float, default=12.0)
    p.add_argument("--taper", type=int, default=6)
    p.set_defaults(func=cmd_phantom)

    def common(p):
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--run", type=Path, required=True)
        p.add_argument("--ids", type=_ids, default=None,
                       help="volume numbers, e.g. 0-15 or 3,7,9")
        p.add_argument("--crop", type=_crop_hw, default=None, help="h,w")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-init", help="train per-view estimation nets")
    common(p)
    p.add_argument("--views", type=_views_arg, default=("axial",))
    p.add_argument("--sgd-epochs", type=int, default=3)
    p.add_argument("--adam-epochs", type=int, default=5)
    p.add_argument("--sgd-lr", type=float, default=5e-3)
    p.add_argument("--adam-lr", type=float, default=1e-4)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--val-fraction", type=float, default=0.01)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--base-width", type=int, default=8)
    p.set_defaults(func=cmd_train_init)

    p = sub.add_parser("train-primary", help="train the refinement net")
    common(p)
    p.add_argument("--views", type=_views_arg, default=("axial",))
    p.add_argument("--depth", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--val-fraction", type=float, default=0.01)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--teacher-forced", action="store_true")
    p.add_argument("--base-width", type=int, default=8)
    p.set_defaults(func=cmd_train_primary)

    p = sub.add_parser("infer", help="run refinement inference")
    common(p)
    p.add_argument("--views", type=_views_arg, default=("axial",))
    p.add_argument("--depth", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sweeps", choices=("both", "forward"), default="both")
    p.add_argument("--inclusive", action="store_true",
                   help="count probability == threshold as foreground")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred", type=Path, default=None,
                   help="directory of pred_<id>.pvol files (default run/volumes)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="histograms, reliability, agreement tables")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--area-threshold", type=int, default=300)
    p.add_argument("--head-tail-n", type=int, default=3)
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config_file(parser, argv):
    """Config precedence: command line > config file > built-in defaults."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", type=Path, default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config is None:
        return
    path = Path(known.config)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    values = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line {line!r} (expected key=value)")
        key, val = line.split("=", 1)
        values[key.strip().replace("-", "_")] = val.strip()

    actions = {}
    for p in [parser] + list(parser._subparsers._group_actions[0].choices.values()):
        for a in p._actions:
            actions.setdefault(a.dest, a)
    converted = {}
    for key, val in values.items():
        if key not in actions:
            raise ConfigError(f"unknown config key {key!r}")
        a = actions[key]
        if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            converted[key] = val.lower() in ("1", "true", "yes", "on")
        elif a.type is not None:
            try:
                converted[key] = a.type(val)
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise ConfigError(f"bad config value for {key}: {e}")
        else:
            converted[key] = val
    for p in [parser] + list(parser._subparsers._group_actions[0].choices.values()):
        p.set_defaults(**{k: v for k, v in converted.items()
                          if any(a.dest == k for a in p._actions)})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return 0 if (e.code or 0) == 0 else 1
        return args.func(args) or 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
