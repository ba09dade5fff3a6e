"""``risurconv`` command line: extract, invariance-check, synth, train, eval, ablate.

Machine-readable results go to stdout as one JSON object per line; progress and
summaries go to stderr. Exit status is 0 on success, 1 on bad input or
configuration, and 2 when ``invariance-check`` observes a deviation above
tolerance.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .cloud import CloudFormatError, PointCloud, apply_rotation, estimate_normals, load_cloud, random_rotation
from .model import config as C
from .model.data import CLASSES, load_dataset, save_dataset, synth_dataset
from .model.network import DegenerateCloudError, build_classifier, cloud_geometry, predict_logits
from .model.train import (
    GRIDS,
    PROTOCOLS,
    TrainingDivergedError,
    ablation_sweep,
    evaluate_protocol,
    protocol_name,
    train,
)
from .nn.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .risp import risp_features, write_feature_dump
from .sampling import farthest_point_sample, knn_indices

EXIT_OK, EXIT_USAGE, EXIT_PROPERTY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sub = self.prog.split(" ", 1)[1] + ": " if " " in self.prog else ""
        raise UsageError(sub + message)


def _emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.flush()


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


# --------------------------------------------------------------------------- config


def _load_run_config(args) -> tuple[C.ClassifierConfig, C.TrainConfig]:
    """Preset, then the ``--config`` JSON sections, then explicit flags."""
    preset = C.paper_preset if getattr(args, "preset", "toy") == "paper" else C.toy_preset
    model = preset().to_dict()
    training = C.TrainConfig().to_dict()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise C.ConfigError(f"{args.config}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(doc, dict):
            raise C.ConfigError(f"{args.config}: expected a JSON object")
        unknown = sorted(set(doc) - {"classifier", "train"})
        if unknown:
            raise C.ConfigError(f"{args.config}: unknown sections {', '.join(unknown)}")
        for section, target, cls in (("classifier", model, C.ClassifierConfig), ("train", training, C.TrainConfig)):
            part = doc.get(section, {})
            if not isinstance(part, dict):
                raise C.ConfigError(f"{args.config}: section {section!r} must be an object")
            bad = sorted(set(part) - set(target))
            if bad:
                raise C.ConfigError(f"{args.config}: unknown {cls.__name__} keys {', '.join(bad)}")
            target.update(part)
    for flag, key in (("num_classes", "num_classes"), ("variant", "risp_variant"), ("surfaces", "surfaces")):
        value = getattr(args, flag, None)
        if value is not None:
            model[key] = value
    for flag, key in (("lr", "lr"), ("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("rotation", "rotation_mode_train"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            training[key] = value
    try:
        return C.ClassifierConfig.from_dict(model), C.TrainConfig.from_dict(training)
    except TypeError as exc:
        raise C.ConfigError(str(exc)) from None


def _dataset(path) -> list[PointCloud]:
    clouds = load_dataset(path)
    if not clouds:
        raise UsageError(f"no .xyz files in {path}")
    if any(c.label is None for c in clouds):
        raise UsageError(f"{path}: every file name must end in _<label>.xyz")
    return clouds


def _network_from_checkpoint(path):
    header, _ = read_checkpoint(path)
    meta = header.get("meta", {})
    if "classifier" not in meta:
        raise UsageError(f"{path}: checkpoint carries no classifier configuration")
    cfg = C.ClassifierConfig.from_dict(meta["classifier"])
    net = build_classifier(cfg)
    load_checkpoint(path, net)
    net.eval()
    return net, header


def _save(path, net, tcfg, extra=None):
    meta = {"classifier": net.cfg.to_dict(), "train": tcfg.to_dict(), **(extra or {})}
    save_checkpoint(path, net, C.config_hash(net.cfg, tcfg), meta)


# --------------------------------------------------------------------------- extract


def _cloud_with_normals(path, mode: str, k: int) -> PointCloud:
    cloud = load_cloud(path)
    if mode == "estimate":
        return estimate_normals(cloud, k=k)
    if not cloud.has_normals:
        raise UsageError(f"{path} carries no normals; use --normals estimate")
    return cloud


def cmd_extract(args) -> int:
    cloud = _cloud_with_normals(args.input, args.normals, args.normal_k)
    n = len(cloud)
    if args.refs > n:
        raise UsageError(f"--refs {args.refs} exceeds the {n} points in {args.input}")
    if args.k >= n:
        raise UsageError(f"--k {args.k} needs more than {n} points")
    ref = farthest_point_sample(cloud.points, args.refs)
    try:
        nbr = knn_indices(cloud.points, ref, args.k)
    except ValueError as exc:
        raise DegenerateCloudError(str(exc)) from None
    feats = risp_features(cloud.points, cloud.normals, ref, nbr, args.variant)
    write_feature_dump(args.out, feats)
    m, k, c = feats.shape
    _emit({"command": "extract", "out": str(args.out), "M": m, "K": k, "C": c, "variant": args.variant})
    _say(args, f"wrote {m} x {k} x {c} descriptors to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- invariance-check


def _corrupted_features(points, normals, ref, nbr, variant):
    # negative control: normal angles measured against the world z axis
    world = np.broadcast_to(np.array([0.0, 0.0, 1.0]), normals.shape)
    return risp_features(points, world, ref, nbr, variant)


def _descriptors(cloud, refs, k, variant, corrupt):
    ref = farthest_point_sample(cloud.points, refs)
    nbr = knn_indices(cloud.points, ref, k)
    fn = _corrupted_features if corrupt else risp_features
    return fn(cloud.points, cloud.normals, ref, nbr, variant)


def cmd_invariance_check(args) -> int:
    cloud = _cloud_with_normals(args.input, args.normals, args.normal_k)
    refs = min(args.refs, len(cloud))
    if args.k >= len(cloud):
        raise UsageError(f"--k {args.k} needs more than {len(cloud)} points")
    base = _descriptors(cloud, refs, args.k, args.variant, args.debug_corrupt_angles)

    net = None
    if args.checkpoint:
        net, _ = _network_from_checkpoint(args.checkpoint)
    elif not args.no_logits:
        net = build_classifier(C.toy_preset(), seed=args.seed)
        net.eval()
    logits0 = None
    if net is not None:
        try:
            cloud_geometry(cloud, net.cfg)
            logits0 = predict_logits(net, [cloud])
        except DegenerateCloudError as exc:
            _say(args, f"logit check skipped: {exc}")

    seeds = np.random.SeedSequence(args.seed).generate_state(2 * args.trials)
    worst_risp, worst_logit = 0.0, 0.0
    for t in range(args.trials):
        rot = random_rotation("so3", int(seeds[2 * t]))
        order = np.random.default_rng(int(seeds[2 * t + 1])).permutation(len(cloud))
        moved = apply_rotation(cloud, rot).permuted(order)
        feats = _descriptors(moved, refs, args.k, args.variant, args.debug_corrupt_angles)
        worst_risp = max(worst_risp, float(np.max(np.abs(feats - base))))
        if logits0 is not None:
            worst_logit = max(worst_logit, float(np.max(np.abs(predict_logits(net, [moved]) - logits0))))

    passed = worst_risp <= args.tol and worst_logit <= args.logit_tol
    _emit({"command": "invariance-check", "trials": args.trials, "max_abs_risp": worst_risp,
           "max_abs_logit": worst_logit if logits0 is not None else None,
           "tol": args.tol, "logit_tol": args.logit_tol, "passed": passed})
    _say(args, f"{args.trials} trials: max |dRISP| {worst_risp:.3e} (tol {args.tol:g})"
         + (f", max |dlogit| {worst_logit:.3e} (tol {args.logit_tol:g})" if logits0 is not None else "")
         + (" ok" if passed else " FAILED"))
    return EXIT_OK if passed else EXIT_PROPERTY


# --------------------------------------------------------------------------- synth / train / eval / ablate


def _class_names(spec: str) -> tuple[str, ...]:
    if spec.isdigit():
        n = int(spec)
        if not 1 <= n <= len(CLASSES):
            raise UsageError(f"--classes must be between 1 and {len(CLASSES)}")
        return CLASSES[:n]
    names = tuple(s.strip() for s in spec.split(",") if s.strip())
    unknown = [s for s in names if s not in CLASSES]
    if unknown:
        raise UsageError(f"unknown classes {unknown}; choose from {', '.join(CLASSES)}")
    return names


def cmd_synth(args) -> int:
    names = _class_names(args.classes)
    clouds = synth_dataset(names, args.per_class, args.noise, args.seed, args.points)
    paths = save_dataset(clouds, args.out)
    _emit({"command": "synth", "out": str(args.out), "files": len(paths), "classes": list(names),
           "per_class": args.per_class, "seed": args.seed})
    _say(args, f"wrote {len(paths)} clouds to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = _dataset(args.data)
    if args.num_classes is None:
        args.num_classes = int(max(c.label for c in data)) + 1
    cfg, tcfg = _load_run_config(args)
    net = build_classifier(cfg, seed=tcfg.seed)
    if args.init_out:
        _save(args.init_out, net, tcfg)

    def report(rec):
        _emit(rec)
        _say(args, f"epoch {rec['epoch']:3d}  loss {rec['loss']:.4f}  acc {rec['accuracy']:.3f}  "
                   f"({rec['seconds']:.1f}s)")

    t0 = time.perf_counter()
    _, history = train(net, data, tcfg, callback=report)
    _save(args.out, net, tcfg)
    _say(args, f"trained {len(history)} epochs in {time.perf_counter() - t0:.1f}s; checkpoint {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, header = _network_from_checkpoint(args.checkpoint)
    data = _dataset(args.data)
    if max(c.label for c in data) >= net.cfg.num_classes:
        raise UsageError("dataset labels exceed the checkpoint's class count")
    modes = list(PROTOCOLS) if args.mode == "all" else [protocol_name(args.mode)]
    for mode in modes:
        accs = [evaluate_protocol(net, data, mode, seed=args.seed * 1000 + r) for r in range(args.resamples)]
        rec = {"command": "eval", "mode": mode, "accuracy": float(np.mean(accs)), "runs": accs,
               "n": len(data), "config_hash": header["config_hash"], "seed": args.seed}
        _emit(rec)
        _say(args, f"{mode}: accuracy {100 * rec['accuracy']:.2f}% over {len(data)} clouds")
    return EXIT_OK


def cmd_ablate(args) -> int:
    names = _class_names(args.classes)
    if args.train_data:
        train_set = _dataset(args.train_data)
        test_set = _dataset(args.test_data) if args.test_data else train_set
        n_classes = int(max(c.label for c in train_set)) + 1
    else:
        data_seed = args.seed or 0
        train_set = synth_dataset(names, args.per_class, 0.01, data_seed, args.points)
        test_set = synth_dataset(names, args.test_per_class, 0.01, data_seed + 1, args.points)
        n_classes = len(names)
    if args.num_classes is None:
        args.num_classes = n_classes
    cfg, tcfg = _load_run_config(args)

    def report(rec):
        _emit(rec)
        _say(args, f"{rec['table']:>9} {rec['row']}: {100 * rec['accuracy']:.1f}%")

    ablation_sweep(cfg, train_set, test_set, tcfg, grids=args.grid or tuple(GRIDS), init_seed=tcfg.seed,
                   callback=report)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (default 0, or the config's train seed)")
    common.add_argument("--config", type=Path, help="JSON with optional 'classifier' and 'train' sections")
    common.add_argument("--quiet", action="store_true", help="no human summary on stderr")

    run = _Parser(add_help=False)
    run.add_argument("--preset", choices=("toy", "paper"), default="toy")
    run.add_argument("--epochs", type=int)
    run.add_argument("--lr", type=float)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--rotation", choices=("none", "z", "so3"), help="training-time rotation augmentation")
    run.add_argument("--num-classes", type=int)
    run.add_argument("--variant", choices=("standard-14", "extended-16", "distance-off", "angles-only",
                                           "euclid-only"))
    run.add_argument("--surfaces", type=int, choices=(1, 2, 3, 4))

    geom = _Parser(add_help=False)
    geom.add_argument("--input", type=Path, required=True, help="xyz-ascii or OFF point cloud")
    geom.add_argument("--k", type=int, default=8, help="neighbours per reference point")
    geom.add_argument("--normals", choices=("given", "estimate"), default="given")
    geom.add_argument("--normal-k", type=int, default=16, help="neighbourhood size for normal estimation")
    geom.add_argument("--variant", default="standard-14",
                      choices=("standard-14", "extended-16", "distance-off", "angles-only", "euclid-only"))

    p = _Parser(prog="risurconv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", parents=[common, geom], help="write RISP descriptors to a binary dump")
    s.add_argument("--refs", type=int, required=True, help="reference points chosen by farthest point sampling")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("invariance-check", parents=[common, geom],
                       help="rotate and shuffle a cloud, compare descriptors and logits")
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--tol", type=float, default=1e-6, help="max |delta| for float64 descriptors")
    s.add_argument("--logit-tol", type=float, default=1e-4, help="max |delta| for float32 logits")
    s.add_argument("--refs", type=int, default=64)
    s.add_argument("--checkpoint", type=Path, help="network for the logit check (default: random toy net)")
    s.add_argument("--no-logits", action="store_true", help="skip the logit check")
    s.add_argument("--debug-corrupt-angles", action="store_true",
                   help="negative control: measure normal angles against the world z axis")
    s.set_defaults(func=cmd_invariance_check)

    s = sub.add_parser("synth", parents=[common], help="write a labelled synthetic primitive-shape dataset")
    s.add_argument("--classes", default=str(len(CLASSES)), help="count, or comma-separated names")
    s.add_argument("--per-class", type=int, default=50)
    s.add_argument("--points", type=int, default=1024)
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common, run], help="train a classifier on an xyz directory")
    s.add_argument("--data", type=Path, required=True, help="directory of <index>_<label>.xyz files")
    s.add_argument("--out", type=Path, required=True, help="checkpoint path")
    s.add_argument("--init-out", type=Path, help="also save the untrained checkpoint here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint under a rotation protocol")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--mode", default="zso3", choices=("zz", "so3so3", "zso3", "all"))
    s.add_argument("--resamples", type=int, default=1, help="rotation draws averaged per mode")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", parents=[common, run], help="train and score the ablation grids")
    s.add_argument("--grid", action="append", choices=tuple(GRIDS), help="repeatable; default all")
    s.add_argument("--train-data", type=Path)
    s.add_argument("--test-data", type=Path)
    s.add_argument("--classes", default=str(len(CLASSES)))
    s.add_argument("--per-class", type=int, default=50)
    s.add_argument("--test-per-class", type=int, default=20)
    s.add_argument("--points", type=int, default=256)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.seed is None and args.command not in ("train", "ablate"):
            args.seed = 0
        return args.func(args)
    except UsageError as exc:
        msg = str(exc)
    except (CloudFormatError, C.ConfigError, DegenerateCloudError, TrainingDivergedError) as exc:
        msg = f"{type(exc).__name__}: {exc}"
    except (OSError, ValueError) as exc:
        msg = str(exc)
    print("risurconv: error: " + " ".join(msg.split()), file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
