"""Command-line front end.  Every subcommand writes one JSON report.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from collections.abc import Sequence
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .classifier import build_feature_space, train, vectorize
from .datastore import load_device_dataset, load_malware_set, overlap_report, summarize, union_malware
from .errors import DataError
from .evaluation import (
    ProtocolConfig,
    cross_validate,
    eval_new_malware,
    eval_real_life,
    eval_undetected_malware,
)
from .matching import (
    CLEAN,
    INFECTED,
    incidence,
    infection_times,
    label_devices,
    load_exclusions,
    load_markers,
    region_lower_bounds,
)
from .risk import candidate_groups, collect_tti, device_expected_tti, summarize_apps
from .stats import cohort_report
from .synth import SynthConfig, generate, write_dataset

PROTOCOLS = ("cv", "new", "undetected", "reallife")
STAT_METRICS = {"battery": "battery_life_hours", "apps": "app_count"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); usage errors are 1 here
        raise UsageError(f"{self.prog}: {message}")


def _sha1_file(path: str) -> str:
    h = hashlib.sha1()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Collects input digests while loading, then emits the report."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.inputs: dict[str, str] = {}

    def open(self, path: str):
        try:
            self.inputs[path] = _sha1_file(path)
            return open(path, encoding="utf-8", newline="")
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None

    def devices(self):
        meta = None
        if getattr(self.args, "device_meta", None):
            with self.open(self.args.device_meta) as fh:
                meta = fh.read()
        with self.open(self.args.devices) as fh:
            return load_device_dataset(fh, meta)

    def malware_sets(self):
        sets = []
        for path in self.args.malware or []:
            with self.open(path) as fh:
                sets.append(load_malware_set(Path(path).stem, fh))
        return sets

    def malware(self):
        sets = self.malware_sets()
        if not sets:
            raise UsageError("at least one --malware file is required")
        return union_malware(sets)

    def exclusions(self):
        if not getattr(self.args, "exclusions", None):
            return None
        with self.open(self.args.exclusions) as fh:
            return load_exclusions(fh)

    def manifest(self, config: dict) -> dict:
        return {
            "command": self.args.command,
            "config": config,
            "inputs": dict(sorted(self.inputs.items())),
            "seed": self.args.seed,
            "tool_version": __version__,
        }

    def emit(self, body: dict, config: dict | None = None) -> None:
        if config is None:
            config = _echo(self.args)
        report = {"manifest": self.manifest(config), **body}
        text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
        out = getattr(self.args, "out", None)
        if out:
            Path(out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)


_NOT_ECHOED = {"out", "out_dir", "command", "func", "seed_flag"}


def _echo(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}


def _cmd_summarize(run: _Run) -> None:
    run.emit({"summary": asdict(summarize(run.devices()))})


def _cmd_match(run: _Run) -> None:
    devices = run.devices()
    sets = run.malware_sets()
    if not sets:
        raise UsageError("at least one --malware file is required")
    excl = run.exclusions()
    union = union_malware(sets)
    body = {
        "incidence": incidence(devices, union, excl).to_dict(),
        "per_set": {s.name: incidence(devices, s, excl).to_dict() for s in sets},
    }
    if 2 <= len(sets) <= 3:
        body["overlap"] = overlap_report(sets)
    if run.args.markers:
        with run.open(run.args.markers) as fh:
            markers = load_markers(fh)
        body["regions"] = region_lower_bounds(label_devices(devices, union, excl), devices, markers)
    run.emit(body)


def _cmd_label(run: _Run) -> None:
    devices = run.devices()
    labels = label_devices(devices, run.malware(), run.exclusions())
    counts = {INFECTED: 0, CLEAN: 0}
    for lab in labels.values():
        counts[lab] += 1
    run.emit({"labels": dict(sorted(labels.items())), "counts": counts})


def _cmd_train(run: _Run) -> None:
    devices = run.devices()
    malware = run.malware()
    labels = label_devices(devices, malware, run.exclusions())
    space = build_feature_space(devices, malware)
    vectors = [vectorize(d, space) for d in devices]
    model = train(vectors, [labels[d.device] for d in devices], run.args.alpha, space)
    run.emit({"model": model.to_dict(), "n_devices": len(devices)})


def _read_config(run: _Run) -> dict:
    path = run.args.config
    if not path:
        return {}
    with run.open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected a JSON object")
    return data


def _protocol_config(run: _Run) -> ProtocolConfig:
    args = run.args
    base = _read_config(run)
    flags = {
        "folds": args.folds,
        "malware_groups": args.groups,
        "repeats": args.repeats,
        "clean_split": args.clean_split,
        "alpha": args.alpha,
    }
    merged = {**ProtocolConfig().to_dict(), **base, **{k: v for k, v in flags.items() if v is not None}}
    if args.seed_flag or "seed" not in base:
        merged["seed"] = args.seed
    args.seed = merged["seed"]
    try:
        return ProtocolConfig(**merged)
    except TypeError as exc:
        raise DataError(f"bad protocol config: {exc}") from None


def _cmd_evaluate(run: _Run) -> None:
    args = run.args
    config = _protocol_config(run)
    devices = run.devices()
    excl = run.exclusions()
    if args.protocol == "reallife":
        sets = run.malware_sets()
        if len(sets) != 2:
            raise UsageError("--protocol reallife needs exactly two --malware files: original, updated")
        result = eval_real_life(devices, sets[0], sets[1], config, excl)
    else:
        malware = run.malware()
        if args.protocol == "cv":
            labels = label_devices(devices, malware, excl)
            result = cross_validate(devices, labels, config, malware)
        elif args.protocol == "new":
            result = eval_new_malware(devices, malware, config, excl)
        else:
            result = eval_undetected_malware(devices, malware, config, excl)
    echo = {"protocol": args.protocol, **config.to_dict()}
    run.emit({"evaluation": result.to_dict()}, echo)


def _cmd_stats(run: _Run) -> None:
    devices = run.devices()
    labels = label_devices(devices, run.malware(), run.exclusions())
    metric = STAT_METRICS[run.args.metric]
    panels = cohort_report(devices, labels, metric)
    run.emit({"metric": metric, "panels": {k: v.to_dict() for k, v in panels.items()}})


def _cmd_tti(run: _Run) -> None:
    devices = run.devices()
    malware = run.malware()
    excl = run.exclusions()
    labels = label_devices(devices, malware, excl)
    times = infection_times(devices, malware, excl)
    missing = [d for d, lab in labels.items() if lab == INFECTED and d not in times]
    if missing:
        raise DataError(f"infected device {missing[0]} has no first_seen on its malware package")
    observations = collect_tti(devices, labels, times)
    apps = summarize_apps(observations)
    groups = candidate_groups(apps, observations)
    estimates = {}
    for dev in devices:
        est = device_expected_tti(dev, apps, groups)
        estimates[dev.device] = None if est == float("inf") else est
    run.emit({
        "apps": [s.to_dict() for s in apps.values()],
        "groups": [g.to_dict() for g in groups],
        "devices": estimates,
        "note": "median_tti / estimate null means +infinity (never infected)",
    })


def _cmd_synth(run: _Run) -> None:
    args = run.args
    data = _read_config(run)
    if args.seed_flag or "seed" not in data:
        data["seed"] = args.seed
    try:
        config = SynthConfig.from_dict(data)
    except TypeError as exc:
        raise DataError(f"bad synth config: {exc}") from None
    args.seed = config.seed
    dataset = generate(config)
    paths = write_dataset(dataset, args.out_dir)
    counts = {INFECTED: 0, CLEAN: 0}
    for lab in dataset.labels.values():
        counts[lab] += 1
    run.emit(
        {
            "outputs": {name: {"file": p.name, "sha1": _sha1_file(str(p))} for name, p in paths.items()},
            "summary": asdict(summarize(dataset.devices)),
            "counts": counts,
        },
        config.to_dict(),
    )


def _parser() -> _Parser:
    p = _Parser(prog="malrisk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help_text, data=True, malware=False):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=func)
        if data:
            sp.add_argument("--devices", required=True, help="device observation CSV")
            sp.add_argument("--device-meta", help="device metadata CSV")
        if malware:
            sp.add_argument("--malware", action="append", help="malware CSV (repeatable)")
            sp.add_argument("--exclusions", help="CSV of dc,p keys excluded from matching")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="report path (default: stdout)")
        return sp

    command("summarize", _cmd_summarize, "distinct-value counts of a device dataset")
    m = command("match", _cmd_match, "incidence of infection", malware=True)
    m.add_argument("--markers", help="CSV of p,region marker packages")
    command("label", _cmd_label, "label devices infected/clean", malware=True)
    t = command("train", _cmd_train, "train the Naive Bayes indicator", malware=True)
    t.add_argument("--alpha", type=float, default=1.0)
    e = command("evaluate", _cmd_evaluate, "run an evaluation protocol", malware=True)
    e.add_argument("--protocol", choices=PROTOCOLS, required=True)
    e.add_argument("--alpha", type=float)
    e.add_argument("--folds", type=int)
    e.add_argument("--groups", type=int)
    e.add_argument("--repeats", type=int)
    e.add_argument("--clean-split", type=float)
    e.add_argument("--config", help="JSON protocol config; flags override it")
    s = command("stats", _cmd_stats, "infected vs clean cohort statistics", malware=True)
    s.add_argument("--metric", choices=sorted(STAT_METRICS), required=True)
    command("tti", _cmd_tti, "time-to-infection estimates", malware=True)
    y = command("synth", _cmd_synth, "generate a synthetic population", data=False)
    y.add_argument("--config", help="JSON synth config")
    y.add_argument("--out-dir", required=True)
    return p


def _resolve_seed(args: argparse.Namespace) -> None:
    """``--seed`` wins, then a seed in ``--config`` (applied by the command),
    then ``IR_SEED``, then 0."""
    args.seed_flag = args.seed is not None
    if args.seed is None:
        env = os.environ.get("IR_SEED")
        try:
            args.seed = int(env) if env is not None else 0
        except ValueError:
            raise UsageError(f"IR_SEED is not an integer: {env!r}") from None


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("malrisk: a subcommand is required")
        _resolve_seed(args)
        run = _Run(args)
        args.func(run)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
