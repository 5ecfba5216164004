"""``cdgc`` command line.

Exit codes: 0 success, 1 check failure (or a failed training run), 2 usage
or configuration error. Settings resolve as flags > ``--config`` file
(``key=value`` lines, ``#`` comments) > built-in defaults. Computation is
pinned to ``CDGC_THREADS`` BLAS threads (default 1).
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from cdgc import checks
from cdgc.data import StreamKind, load_clip, load_manifest_clips, stack_stream, synth_dataset
from cdgc.errors import ConfigError, DimensionError, GraphError, ParseError, TrainingError
from cdgc.graph import load_graph, ntu_graph
from cdgc.network.checkpoint import load_checkpoint, save_checkpoint
from cdgc.network.config import SPATIAL_OPS, BackboneConfig, TrainConfig
from cdgc.network.fusion import fuse_scores
from cdgc.network.model import build_model, forward
from cdgc.network.train import train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
BACKBONES = ("full", "desk", "toy")
TIMED_EPOCHS = (2, 3, 4)  # 1-based epochs whose median is the reported epoch time


class UsageError(Exception):
    pass


# -- settings --------------------------------------------------------------------

def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _names(text) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


# per command: key -> (default, parser); flags map onto the same keys
COMMON = {"seed": (0, int), "graph": (None, str)}
MODEL_KEYS = {
    "variant": ("accelerated_cdgc", str), "backbone": ("toy", str), "classes": (8, int),
    "alpha": (0.3, float), "alpha_mode": ("fixed", str),
}
DATA_KEYS = {"clips_per_class": (100, int), "frames": (32, int), "stream": ("joint", str)}
TRAIN_KEYS = {"epochs": (30, int), "learning_rate": (0.1, float), "batch_size": (16, int)}
COMMAND_KEYS = {
    "equivcheck": {"trials": (100, int)},
    "gradcheck": {"scope": ("operator", str), "seeds": (None, int)},
    "bench": {**MODEL_KEYS, **DATA_KEYS, **TRAIN_KEYS, "variants": (("cdgc_matrix", "accelerated_cdgc"), _names),
              "backbone": ("desk", str), "clips": (600, int), "epochs": (4, int), "target": (0.9, float),
              "until_target": (False, _bool), "seeds": (1, int)},
    "alpha-sweep": {**MODEL_KEYS, **DATA_KEYS, **TRAIN_KEYS, "alphas": ((0.0, 0.3, 1.0), _floats),
                    "variant": ("cdgc_matrix", str), "clips_per_class": (40, int), "epochs": (3, int),
                    "seeds": (1, int)},
    "forward": {**MODEL_KEYS, "stream": ("joint", str), "checkpoint": (None, str)},
    "params": {**MODEL_KEYS, "backbone": ("full", str), "classes": (60, int)},
    "train": {**MODEL_KEYS, **DATA_KEYS, **TRAIN_KEYS, "manifest": (None, str)},
    "fuse": {"weights": (None, _floats)},
}


def read_config(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}", line)
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    spec = {**COMMON, **COMMAND_KEYS[command]}
    settings = {k: d for k, (d, _) in spec.items()}
    if args.config:
        for key, text in read_config(args.config).items():
            if key not in spec:
                raise ConfigError(f"unknown config key {key!r} for {command}", key)
            try:
                settings[key] = spec[key][1](text)
            except ValueError:
                raise ConfigError(f"bad value {text!r} for config key {key!r}", key) from None
    for key in spec:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _graph(settings):
    path = settings.get("graph")
    return load_graph(path) if path else ntu_graph()


def _backbone(settings, variant=None, alpha=None) -> BackboneConfig:
    name = settings["backbone"]
    if name not in BACKBONES:
        raise ConfigError(f"backbone must be one of {BACKBONES}, got {name!r}", "backbone")
    variant = variant or settings["variant"]
    if variant not in SPATIAL_OPS:
        raise ConfigError(f"variant must be one of {SPATIAL_OPS}, got {variant!r}", "variant")
    return getattr(BackboneConfig, name)(variant, num_classes=settings["classes"],
                                          alpha=settings["alpha"] if alpha is None else alpha,
                                          alpha_mode=settings["alpha_mode"])


def _synthetic(settings, graph, seed, clips_per_class=None):
    clips = synth_dataset(settings["classes"], clips_per_class or settings["clips_per_class"],
                          settings["frames"], graph, seed)
    return stack_stream(clips, StreamKind(settings["stream"]), graph)


def _train_config(settings, seed) -> TrainConfig:
    return TrainConfig(learning_rate=settings["learning_rate"], epochs=settings["epochs"],
                       batch_size=settings["batch_size"], seed=seed)


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- commands ---------------------------------------------------------------------

def cmd_equivcheck(args, s) -> int:
    if args.replay:
        case = checks.replay(args.replay)
        ok = case.error < checks.EQUIV_TOL
        _write(f"replay seed={case.seed} trial={case.trial} alpha={case.alpha} error={case.error!r} "
               f"status={'pass' if ok else 'fail'}\n", args.out)
        return EXIT_OK if ok else EXIT_FAIL
    trials = s["trials"]
    if trials < 0:
        raise UsageError("trials must be >= 0")
    if trials == 0:
        print("warning: 0 trials requested; nothing was checked", file=sys.stderr)
    t0 = time.perf_counter()
    report = checks.equivcheck(trials, s["seed"], inject_fault=args.inject_fault)
    elapsed = time.perf_counter() - t0
    status = "pass" if report.passed else "fail"
    _write(f"trials={trials} max_relative_error={report.max_error!r} tolerance={checks.EQUIV_TOL} "
           f"seconds={elapsed:.3f} status={status}\n", args.out)
    if report.passed:
        return EXIT_OK
    artifact = args.artifact or "equivcheck_failure.json"
    checks.write_replay(report.worst, artifact)
    w = report.worst
    print(f"divergence: seed={w.seed} trial={w.trial} alpha={w.alpha} shape={w.shape} "
          f"error={w.error!r}; replay artifact written to {artifact}", file=sys.stderr)
    return EXIT_FAIL


def cmd_gradcheck(args, s) -> int:
    scope = s["scope"]
    if scope not in checks.GRAD_SCOPES:
        raise UsageError(f"scope must be one of {checks.GRAD_SCOPES}")
    seeds = s["seeds"] if s["seeds"] is not None else (5 if scope == "model" else 20)
    tol = checks.GRAD_TOL[scope]
    rows, worst = [], None
    for k in range(seeds):
        seed = s["seed"] + k
        rep = checks.gradcheck(scope, seed)
        ok = rep.max_error < tol
        rows.append([scope, seed, repr(rep.max_error), rep.worst_param, "pass" if ok else "fail"])
        if worst is None or rep.max_error > worst[1].max_error:
            worst = (seed, rep)
    _write(_csv(["scope", "seed", "max_relative_error", "worst_param", "status"], rows), args.out)
    if worst is not None and worst[1].max_error >= tol:
        seed, rep = worst
        print(f"gradient check failed: {rep.worst_param}{list(rep.worst_index or ())} relative error "
              f"{rep.max_error:.3e} >= {tol:g} (seed {seed})", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def bench_variant(variant, settings, data, graph, seed, backbone=None):
    """Train one variant; returns ``(model, log, seconds_per_epoch)``."""
    backbone = backbone or _backbone(settings, variant)
    model = build_model(backbone, graph, seed)
    cfg = _train_config(settings, seed)
    target = settings["target"]
    floor = max(TIMED_EPOCHS)

    def stop(row):
        return settings["until_target"] and row.epoch >= floor and row.accuracy >= target

    log = train(model, data, cfg, callback=stop)
    secs = [r.seconds for r in log.rows]
    timed = [secs[e - 1] for e in TIMED_EPOCHS if e <= len(secs)] or secs[1:] or secs
    return model, log, statistics.median(timed)


def cmd_bench(args, s) -> int:
    graph = _graph(s)
    for v in s["variants"]:
        if v not in ("cdgc_matrix", "accelerated_cdgc"):
            raise ConfigError(f"bench variants must be cdgc_matrix or accelerated_cdgc, got {v!r}", "variants")
    per_class = -(-s["clips"] // s["classes"])
    rows = []
    for k in range(s["seeds"]):
        seed = s["seed"] + k
        data = _synthetic(s, graph, seed, per_class)
        for v in s["variants"]:
            model, log, spe = bench_variant(v, s, data, graph, seed)
            ett = log.epochs_to_target(s["target"])
            rows.append([v, seed, s["backbone"], len(data[1]), model.param_count(), f"{spe:.6f}",
                         len(log.rows), "" if ett is None else ett, repr(log.final_accuracy)])
    _write(_csv(["variant", "seed", "backbone", "clips", "params", "seconds_per_epoch", "epochs_run",
                 "epochs_to_target", "final_accuracy"], rows), args.out)
    return EXIT_OK


def cmd_alpha_sweep(args, s) -> int:
    alphas = s["alphas"]
    if any(not 0.0 <= a <= 1.0 for a in alphas):
        raise UsageError(f"alpha values must lie in [0, 1], got {list(alphas)}")
    graph = _graph(s)
    rows = []
    for k in range(s["seeds"]):
        seed = s["seed"] + k
        data = _synthetic(s, graph, seed)
        for a in alphas:
            model = build_model(_backbone(s, alpha=a), graph, seed)
            log = train(model, data, _train_config(s, seed))
            rows.append([repr(a), seed, repr(log.final_accuracy)])
    _write(_csv(["alpha", "seed", "train_accuracy"], rows), args.out)
    return EXIT_OK


def _score_csv(probs: np.ndarray) -> str:
    header = ["sample", "pred"] + [f"p{k}" for k in range(probs.shape[1])]
    return _csv(header, [[i, int(p.argmax())] + [repr(float(v)) for v in p] for i, p in enumerate(probs)])


def read_scores(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise ParseError("empty score file", 1, str(path))
    cols = [i for i, name in enumerate(rows[0]) if name.startswith("p") and name[1:].isdigit()]
    if not cols:
        raise ParseError("no p<k> score columns in header", 1, str(path))
    try:
        return np.array([[float(r[i]) for i in cols] for r in rows[1:]], dtype=np.float64).reshape(-1, len(cols))
    except (ValueError, IndexError):
        raise ParseError("malformed score row", None, str(path)) from None


def cmd_forward(args, s) -> int:
    graph = _graph(s)
    if s["checkpoint"]:
        model = load_checkpoint(s["checkpoint"], graph)
    else:
        model = build_model(_backbone(s), graph, s["seed"])
    if args.manifest:
        clips = load_manifest_clips(args.manifest)
    elif args.input:
        clips = [load_clip(p) for p in args.input]
    else:
        raise UsageError("forward needs --input clip files or --manifest")
    x, _ = stack_stream(clips, StreamKind(s["stream"]), graph)
    _write(_score_csv(forward(model, x)), args.out)
    return EXIT_OK


def cmd_params(args, s) -> int:
    model = build_model(_backbone(s), _graph(s), s["seed"])
    _write(f"{model.param_count()}\n", args.out)
    return EXIT_OK


def cmd_train(args, s) -> int:
    graph = _graph(s)
    if s["manifest"]:
        data = stack_stream(load_manifest_clips(s["manifest"]), StreamKind(s["stream"]), graph)
    else:
        data = _synthetic(s, graph, s["seed"])
    model = build_model(_backbone(s), graph, s["seed"])
    log = train(model, data, _train_config(s, s["seed"]))
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    (out / "log.csv").write_text(log.to_csv())
    print(f"final train accuracy {log.final_accuracy:.4f}; wrote {out / 'model.ckpt'} and {out / 'log.csv'}")
    return EXIT_OK


def cmd_fuse(args, s) -> int:
    if not args.scores:
        raise UsageError("fuse needs at least one score CSV")
    fused = fuse_scores([read_scores(p) for p in args.scores], s["weights"])
    _write(_score_csv(fused), args.out)
    return EXIT_OK


COMMANDS = {
    "equivcheck": cmd_equivcheck, "gradcheck": cmd_gradcheck, "bench": cmd_bench,
    "alpha-sweep": cmd_alpha_sweep, "forward": cmd_forward, "params": cmd_params,
    "train": cmd_train, "fuse": cmd_fuse,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdgc", description="Central-difference graph convolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int)
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--out", help="output file (directory for train); stdout when omitted")
        p.add_argument("--graph", help="graph file; default is the 25-joint skeleton")
        if name in ("bench", "alpha-sweep", "forward", "params", "train"):
            p.add_argument("--alpha", type=float)
            p.add_argument("--variant")
            p.add_argument("--classes", type=int)
        if name in ("bench", "alpha-sweep", "train"):
            p.add_argument("--epochs", type=int)
        if name == "equivcheck":
            p.add_argument("--trials", type=int)
            p.add_argument("--replay", help="re-run the instance stored in a failure artifact")
            p.add_argument("--artifact", help="where to write the failure artifact")
            p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
        if name == "gradcheck":
            p.add_argument("--scope", choices=checks.GRAD_SCOPES)
            p.add_argument("--seeds", type=int)
        if name == "bench":
            p.add_argument("--variants", type=_names)
            p.add_argument("--seeds", type=int)
            p.add_argument("--backbone", choices=BACKBONES)
        if name == "alpha-sweep":
            p.add_argument("--alphas", type=_floats)
            p.add_argument("--seeds", type=int)
        if name in ("params", "train", "forward"):
            p.add_argument("--backbone", choices=BACKBONES)
        if name == "forward":
            p.add_argument("--input", nargs="+")
            p.add_argument("--manifest")
            p.add_argument("--checkpoint")
        if name == "fuse":
            p.add_argument("scores", nargs="+")
            p.add_argument("--weights", type=_floats)
    return parser


def _threads() -> int:
    raw = os.environ.get("CDGC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise UsageError(f"CDGC_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve(args.command, args)
        with threadpool_limits(_threads()):
            return COMMANDS[args.command](args, settings)
    except (UsageError, ConfigError) as exc:
        key = getattr(exc, "key", None)
        print(f"cdgc {args.command}: {exc}" + (f" (key: {key})" if key else ""), file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, GraphError, DimensionError, ValueError) as exc:
        print(f"cdgc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"cdgc {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
