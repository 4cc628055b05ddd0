"""Command-line harness: prepare, synth, train, eval, cv, gradcheck.

Exit codes: 0 success, 1 usage/configuration, 2 data/format, 3 numeric
failure, 4 gradient-check failure.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import checkpoint as ckpt
from . import gradcheck as gc
from .architectures import ARCHITECTURES, ConvBlockSpec, ModelConfig, build, forward
from .data import container, montage, preprocess, synthetic
from .data.edf import read_edf
from .errors import (ConfigError, ContractError, DataError, FormatError,
                     NumericError, ShapeError)
from .tensor import Prng
from .training import (TrainConfig, evaluate, format_metrics_row, cross_validate,
                       predict, summarize_folds, train, write_metrics_csv,
                       METRICS_HEADER)

_PRECISIONS = {"f32": "f32", "f64": "f64", "train": "f32", "check": "f64"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None
    if not values:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}")
    return values


def _bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# Casters for config-file values, keyed by argparse destination name.
_CASTERS = {
    "arch": str, "kernels": _int_list, "filters": int, "stride": int, "blocks": int,
    "gru_widths": _int_list, "classes": int, "precision": str, "lr": float,
    "batch": int, "epochs": int, "seed": int, "shuffle": _bool, "grad_clip": float,
    "repeats": int, "jobs": int, "k": int, "tol": float,
    "data": str, "test": str, "out": str, "checkpoint": str,
    "best_checkpoint": str, "metrics": str,
    "edf_dir": str, "manifest": str, "montage": str,
    "per_class": int, "length": int, "channels": int, "noise": float,
    "leak": float, "groups": int,
}


def _apply_config_file(args) -> None:
    path = getattr(args, "config", None)
    if not path:
        return
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in _CASTERS or not hasattr(args, dest):
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if getattr(args, dest) is None:  # explicit flags win over the file
            setattr(args, dest, _CASTERS[dest](value))


def _fill_defaults(args, defaults: dict) -> None:
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _model_args(parser) -> None:
    parser.add_argument("--arch", choices=ARCHITECTURES)
    parser.add_argument("--kernels", type=_int_list,
                        help="comma-separated kernel lengths per conv block")
    parser.add_argument("--filters", type=int, help="filters per kernel length")
    parser.add_argument("--stride", type=int)
    parser.add_argument("--blocks", type=int, help="number of conv blocks")
    parser.add_argument("--gru-widths", type=_int_list, dest="gru_widths")
    parser.add_argument("--classes", type=int)
    parser.add_argument("--precision", choices=sorted(_PRECISIONS))


def _train_args(parser) -> None:
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--shuffle", type=_bool)
    parser.add_argument("--grad-clip", type=float, dest="grad_clip")


_MODEL_DEFAULTS = {"arch": "chrononet", "filters": 32, "stride": 2, "blocks": 3,
                   "gru_widths": (32, 32, 32, 32), "precision": "f32"}
_TRAIN_DEFAULTS = {"lr": 0.001, "batch": 64, "epochs": 500, "seed": 0, "shuffle": True}


def _model_config(args, input_channels: int, num_classes: int) -> ModelConfig:
    kernels = args.kernels
    if kernels is None:
        kernels = (2, 4, 8) if args.arch in ("icrnn", "chrononet") else (4,)
    specs = [ConvBlockSpec(tuple(kernels), args.filters, args.stride)
             for _ in range(args.blocks)]
    return ModelConfig(
        architecture=args.arch,
        input_channels=input_channels,
        conv_blocks=specs,
        gru_widths=list(args.gru_widths),
        num_classes=num_classes,
        precision=_PRECISIONS[args.precision],
    ).validate()


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
        seed=args.seed, shuffle=args.shuffle, precision=_PRECISIONS[args.precision],
        grad_clip=args.grad_clip,
    ).validate()


def _infer_classes(args, labels: np.ndarray) -> int:
    if args.classes is not None:
        return args.classes
    return max(2, int(labels.max()) + 1) if labels.size else 2


# ---------------------------------------------------------------------------
# Commands


def cmd_train(args) -> int:
    _fill_defaults(args, {**_MODEL_DEFAULTS, **_TRAIN_DEFAULTS,
                          "repeats": 1, "checkpoint": "model.cncp",
                          "metrics": "metrics.csv"})
    dataset = container.import_dataset(args.data)
    test_set = container.import_dataset(args.test) if args.test else None
    num_classes = _infer_classes(args, dataset.labels)
    model_cfg = _model_config(args, dataset.samples.shape[1], num_classes)
    base_cfg = _train_config(args)

    final_test_accs = []
    for rep in range(args.repeats):
        if args.repeats == 1:
            seed, suffix = base_cfg.seed, ""
        else:
            seed, suffix = Prng(base_cfg.seed).derive(rep), f".r{rep}"
        cfg = replace(base_cfg, seed=seed)
        model = build(model_cfg, Prng(seed))
        print(METRICS_HEADER)
        history = train(
            model, (dataset.samples, dataset.labels), cfg,
            test_data=(test_set.samples, test_set.labels) if test_set else None,
            checkpoint_path=args.checkpoint + suffix,
            best_checkpoint_path=(args.best_checkpoint + suffix
                                  if args.best_checkpoint else None),
            log=lambda row: print(format_metrics_row(row)),
        )
        write_metrics_csv(args.metrics + suffix, history)
        final = history[-1]
        final_test_accs.append(final.test_acc)
        print(f"run {rep}: final train_acc={final.train_acc:.4f} "
              f"test_acc={final.test_acc:.4f}")

    if args.repeats > 1 and test_set is not None:
        accs = np.array(final_test_accs)
        print(f"repeats {args.repeats}: mean test_acc={accs.mean():.4f} "
              f"min={accs.min():.4f} max={accs.max():.4f}")
    return 0


def cmd_eval(args) -> int:
    snapshot = ckpt.load_checkpoint(args.checkpoint)
    model = ckpt.model_from_checkpoint(snapshot)
    dataset = container.import_dataset(args.data)
    channels = dataset.samples.shape[1]
    if channels != model.config.input_channels:
        raise ConfigError(f"checkpoint expects {model.config.input_channels} channels, "
                          f"dataset has {channels}")
    preds = predict(model, dataset.samples)
    accuracy = float((preds == dataset.labels).mean()) if len(dataset) else 0.0
    if len(dataset) == 0:
        raise ContractError("cannot evaluate an empty dataset")
    print(f"accuracy {accuracy:.4f}")
    k = model.config.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(dataset.labels, preds):
        confusion[t, p] += 1
    for t in range(k):
        counts = " ".join(str(confusion[t, p]) for p in range(k))
        print(f"true {t}: {counts}")
    return 0


def cmd_cv(args) -> int:
    _fill_defaults(args, {**_MODEL_DEFAULTS, **_TRAIN_DEFAULTS, "k": 5, "jobs": 1})
    dataset = container.import_dataset(args.data)
    if dataset.groups is None:
        raise DataError(f"{args.data} has no groups sidecar; cross-validation needs "
                        "per-sample group ids")
    num_classes = _infer_classes(args, dataset.labels)
    model_cfg = _model_config(args, dataset.samples.shape[1], num_classes)
    train_cfg = _train_config(args)
    results = cross_validate(model_cfg, train_cfg, (dataset.samples, dataset.labels),
                             dataset.groups, k=args.k, jobs=args.jobs)
    lines = ["fold,accuracy"]
    lines += [f"{r.fold},{r.test_acc!r}" for r in results]
    mean, lo, hi = summarize_folds(results)
    lines.append(f"mean,{mean!r}")
    text = "\n".join(lines)
    print(text)
    print(f"mean accuracy {mean:.4f} (min {lo:.4f}, max {hi:.4f})")
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    _fill_defaults(args, {"seed": 0, "tol": gc.DEFAULT_TOL})
    if args.precision is not None and _PRECISIONS[args.precision] != "f64":
        raise ConfigError("gradient checking runs in 64-bit mode; "
                          "--precision f32 is not allowed here")
    results = gc.run_suite(seed=args.seed, tol=args.tol)
    print(gc.format_report(results))
    return 0 if all(r.passed for r in results) else 4


def cmd_synth(args) -> int:
    _fill_defaults(args, {"classes": 2, "per_class": 32, "length": 512,
                          "channels": 2, "noise": 0.5, "leak": 0.65,
                          "groups": 10, "seed": 0})
    spec = synthetic.SyntheticSpec(
        num_classes=args.classes, length=args.length, channels=args.channels,
        noise=args.noise, marginal_leak=args.leak, n_groups=args.groups,
        seed=args.seed,
    ).validate()
    dataset = synthetic.generate_synthetic(spec, args.per_class)
    report = synthetic.self_check(dataset, spec)
    container.export_dataset(args.out, dataset)
    print(f"wrote {len(dataset)} samples x {spec.channels} channels x "
          f"{spec.length} to {args.out}")
    print(f"self-check joint={report.joint_accuracy:.3f} "
          f"motif={report.motif_accuracy:.3f} "
          f"envelope={report.envelope_accuracy:.3f}")
    return 0


def _prepare_stage(stage: str, path, fn):
    try:
        return fn()
    except (DataError, FormatError, ContractError, ConfigError) as exc:
        raise type(exc)(f"{path}: {stage}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"{path}: {stage}: {exc}") from exc


def cmd_prepare(args) -> int:
    entries = container.read_manifest(args.manifest)
    if not entries:
        raise DataError(f"{args.manifest}: manifest lists no sessions")
    pairs = montage.load_montage(args.montage) if args.montage else montage.default_montage()
    spec = preprocess.WindowSpec()

    windows = {"train": [], "test": []}
    labels = {"train": [], "test": []}
    patients = {"train": [], "test": []}
    for entry in entries:
        path = entry.path if os.path.isabs(entry.path) \
            else os.path.join(args.edf_dir, entry.path)
        rec = _prepare_stage("read_edf", path, lambda p=path: read_edf(p))
        sig = _prepare_stage("apply_montage", path, lambda r=rec: montage.apply_montage(r, pairs))
        sig = _prepare_stage("resample", path,
                             lambda s=sig: preprocess.resample_recording(s, spec.target_hz))
        cut = _prepare_stage("extract_windows", path,
                             lambda s=sig, e=entry: preprocess.extract_windows(s, spec, e.split))
        windows[entry.split].extend(cut)
        labels[entry.split].extend([entry.label] * len(cut))
        patients[entry.split].extend([entry.patient_id] * len(cut))

    if not windows["train"]:
        raise DataError("no train windows; cannot compute normalization stats")
    train_stack = np.stack(windows["train"])
    mean, std = preprocess.compute_stats(train_stack)

    written = []
    try:
        stats_path = f"{args.out}.stats.cnds"
        container.save_stats(stats_path, mean, std)
        written.append(stats_path)
        for split in ("train", "test"):
            if not windows[split]:
                print(f"{split} windows: 0")
                continue
            stack = np.stack(windows[split])
            normalized = preprocess.normalize(stack, mean, std)
            out_path = f"{args.out}.{split}.cnds"
            container.export_dataset(out_path, container.Dataset(
                normalized, np.asarray(labels[split]), patients[split]))
            written.append(out_path)
            written.append(container.groups_path(out_path))
            print(f"{split} windows: {len(windows[split])}")
    except Exception:
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        raise
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="chrononet",
                     description="Multi-scale convolutional recurrent EEG classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a dataset container")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--data")
    p.add_argument("--test")
    p.add_argument("--checkpoint")
    p.add_argument("--best-checkpoint", dest="best_checkpoint")
    p.add_argument("--metrics")
    p.add_argument("--repeats", type=int)
    p.add_argument("--jobs", type=int)
    _model_args(p)
    _train_args(p)
    p.set_defaults(func=cmd_train, required_args=("data",))

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset container")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.set_defaults(func=cmd_eval, required_args=("checkpoint", "data"))

    p = sub.add_parser("cv", help="grouped k-fold cross-validation")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--k", type=int)
    p.add_argument("--jobs", type=int)
    _model_args(p)
    _train_args(p)
    p.set_defaults(func=cmd_cv, required_args=("data",))

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--precision", choices=sorted(_PRECISIONS))
    p.set_defaults(func=cmd_gradcheck, required_args=())

    p = sub.add_parser("synth", help="generate a synthetic dataset container")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int, dest="per_class")
    p.add_argument("--length", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--leak", type=float)
    p.add_argument("--groups", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth, required_args=("out",))

    p = sub.add_parser("prepare", help="EDF sessions to normalized window containers")
    p.add_argument("--config")
    p.add_argument("--edf-dir", dest="edf_dir")
    p.add_argument("--manifest")
    p.add_argument("--montage")
    p.add_argument("--out")
    p.set_defaults(func=cmd_prepare, required_args=("edf_dir", "manifest", "out"))

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args)
        for name in args.required_args:
            if getattr(args, name, None) is None:
                raise _UsageError(f"--{name.replace('_', '-')} is required "
                                  "(flag or config file)")
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ShapeError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
