"""Command-line entry point: ``condgrad {gen-data,train,meta-train,bench,predict}``.

Settings come from flags, then from an optional ``--config`` file of
``key = value`` lines (``#`` starts a comment), then from built-in defaults.
``CONDGRAD_SEED`` replaces the default seed.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 every benchmark run failed.
"""
import argparse
import hashlib
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import baselines, l2lc
from . import softmax as softmax_mod
from . import svm as svm_mod
from .datasets import Circles, LowRankMulticlass, generate, load_csv, random_qp_kernel, read_table, write_csv
from .domains import SimplexLMO, SoftminLMO
from .errors import CondGradError, FwIterationError, InvalidArgumentError, NumericalError
from .fw import fmt, parse_schedule, run_fw
from .softmax import MulticlassDataset

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BENCH = 0, 2, 3, 4

METHODS = ("fw", "fw-softmin", "l2lc-gamma", "l2lc-direction", "adam-lagrangian", "adam-reparam", "projected-gd")


class ConfigError(CondGradError):
    pass


def default_seed():
    text = os.environ.get("CONDGRAD_SEED", "").strip()
    if not text:
        return 0
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"CONDGRAD_SEED must be an integer, got {text!r}") from None


def _bool(text):
    text = str(text).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _csv_list(text):
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _int_list(text):
    return [int(s) for s in _csv_list(text)]


# name -> (type, default); None means "no default"
SETTINGS = {
    "kind": (str, "circles"),
    "n": (int, None),
    "inner": (float, 1.0),
    "outer": (float, 2.0),
    "noise": (float, 0.1),
    "features": (int, 40),
    "classes": (int, 5),
    "rank": (int, 3),
    "label_noise": (float, 0.0),
    "data": (str, None),
    "test": (str, None),
    "out": (str, None),
    "method": (str, "fw-softmin"),
    "kernel": (str, "rbf:0.5"),
    "C": (float, 1.0),
    "beta": (float, None),
    "schedule": (str, None),
    "T": (int, None),
    "tau": (float, 50.0),
    "k": (int, 5),
    "log_schedule": (_bool, False),
    "lr": (float, None),
    "lam": (float, None),
    "controller": (str, None),
    "seed": (int, None),
    "variant": (str, "gamma"),
    "tasks": (str, "qp"),
    "train_tasks": (int, 32),
    "val_tasks": (int, 8),
    "unroll": (int, 20),
    "meta_epochs": (int, 50),
    "patience": (int, 10),
    "methods": (_csv_list, None),
    "seeds": (_int_list, None),
    "data_seed": (int, 0),
    "model": (str, None),
}

COMMAND_KEYS = {
    "gen-data": ("kind", "n", "inner", "outer", "noise", "features", "classes", "rank", "label_noise",
                 "seed", "out"),
    "train": ("data", "test", "out", "method", "kernel", "C", "beta", "schedule", "T", "tau", "k",
              "log_schedule", "lr", "lam", "controller", "seed"),
    "meta-train": ("variant", "tasks", "n", "train_tasks", "val_tasks", "T", "unroll", "meta_epochs",
                   "lr", "beta", "schedule", "patience", "C", "seed", "out"),
    "bench": ("methods", "seeds", "kind", "n", "noise", "data", "data_seed", "kernel", "C", "beta",
              "schedule", "T", "tau", "k", "log_schedule", "lr", "lam", "controller", "out"),
    "predict": ("model", "data", "out"),
}

REQUIRED = {
    "gen-data": ("out",),
    "train": ("data", "out"),
    "meta-train": ("out",),
    "bench": ("methods", "out"),
    "predict": ("model", "data", "out"),
}


def read_config(path):
    settings = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        settings[key.strip().replace("-", "_")] = value.strip()
    return settings


def resolve(command, args):
    """Merge flags over config-file values over defaults, converting types."""
    allowed = COMMAND_KEYS[command]
    from_file = read_config(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(from_file) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {}
    for key in allowed:
        kind, default = SETTINGS[key]
        flag = getattr(args, key, None)
        if flag is not None:
            raw = flag
        elif key in from_file:
            raw = from_file[key]
        else:
            cfg[key] = default
            continue
        try:
            cfg[key] = kind(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    if cfg.get("seed", 0) is None:
        cfg["seed"] = default_seed()
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"{command}: missing required setting(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")
    return cfg


def config_hash(cfg, skip=("out",)):
    text = "".join(f"{k}={cfg[k]!r}\n" for k in sorted(cfg) if k not in skip)
    return hashlib.sha256(text.encode()).hexdigest()


def write_meta(path, cfg, digest):
    lines = [f"config_hash={digest}"] + [f"{k}={cfg[k]}" for k in sorted(cfg)]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# --- running one method ----------------------------------------------------

@dataclass
class RunResult:
    method: str
    final_obj: float
    acc: float
    trace: object
    model: object
    iters: int


def _method_defaults(method, cfg):
    beta = cfg["beta"]
    schedule = cfg["schedule"]
    T = cfg["T"] if cfg["T"] is not None else 500
    lr = cfg["lr"] if cfg["lr"] is not None else 0.01
    return beta, schedule, T, lr


def _load_controller(cfg, variant):
    if not cfg.get("controller"):
        raise ConfigError(f"method l2lc-{variant} needs --controller")
    ctrl = l2lc.load_controller(cfg["controller"])
    if ctrl.variant != variant:
        raise ConfigError(f"controller {cfg['controller']} is a {ctrl.variant} controller, not {variant}")
    return ctrl


def solve_simplex_qp(method, K, cfg):
    """Run ``method`` on ``min 1/2 a^T K a`` over the simplex; returns ``(alpha, trace, objective)``."""
    beta, schedule_text, T, lr = _method_defaults(method, cfg)
    schedule = parse_schedule(schedule_text or "default")
    if method == "fw":
        alpha, trace = run_fw(svm_mod.simplex_qp_problem(K, SimplexLMO()), schedule, T)
    elif method == "fw-softmin":
        alpha, trace = run_fw(svm_mod.simplex_qp_problem(K, SoftminLMO(beta or 1.0)), schedule, T)
    elif method == "l2lc-gamma":
        ctrl = _load_controller(cfg, "gamma")
        problem = svm_mod.simplex_qp_problem(K, SoftminLMO(beta or ctrl.beta))
        alpha, trace = l2lc.run_learned_gamma(ctrl, problem, T)
    elif method == "l2lc-direction":
        ctrl = _load_controller(cfg, "direction")
        problem = svm_mod.simplex_qp_problem(K, SoftminLMO(beta or ctrl.beta))
        alpha, trace = l2lc.run_learned_direction(
            ctrl, problem, T, parse_schedule(schedule_text) if schedule_text else None, beta)
    elif method == "adam-lagrangian":
        raw, trace = baselines.lagrangian_adam_train(K, T, lr, cfg["lam"])
        value, _ = baselines.lagrangian_objective(raw, K, _lambda(K, cfg["lam"]))
        return baselines.normalized(raw), trace, value
    elif method == "adam-reparam":
        alpha, trace = baselines.reparam_simplex_train(K, T, lr)
    elif method == "projected-gd":
        alpha, trace = baselines.projected_gd_qp(K, T, gap_tol=None)
    else:
        raise ConfigError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    return alpha, trace, svm_mod.dual_objective(alpha, K)


def _lambda(K, lam):
    return 1.0 / K.shape[0] if lam is None else lam


def run_method(method, data, cfg, seed, test=None):
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    beta, schedule_text, T, lr = _method_defaults(method, cfg)
    if isinstance(data, MulticlassDataset):
        if method != "fw":
            raise ConfigError(f"multiclass data supports only method fw (trace-norm softmax), not {method}")
        schedule = parse_schedule(schedule_text or "default")
        model, trace = softmax_mod.train_softmax_fw(data, cfg["tau"], cfg["k"], schedule, T, seed,
                                                    cfg["log_schedule"])
        final = softmax_mod.softmax_objective(model.weights, data)
        acc = model.accuracy(test if test is not None else data)
        return RunResult(method, final, acc, trace, model, T)
    if isinstance(data, np.ndarray):
        alpha, trace, final = solve_simplex_qp(method, data, cfg)
        return RunResult(method, final, math.nan, trace, None, T)
    kernel = svm_mod.parse_kernel(cfg["kernel"])
    K = svm_mod.build_kernel(data, kernel, cfg["C"])
    alpha, trace, final = solve_simplex_qp(method, K, cfg)
    model = svm_mod.SvmModel(alpha, data.x, data.y, kernel, float(beta or 1.0), float(cfg["C"]),
                             {"method": method})
    acc = model.accuracy(test if test is not None else data)
    return RunResult(method, final, acc, trace, model, T)


def _save_model(model, path):
    if isinstance(model, softmax_mod.SoftmaxModel):
        softmax_mod.save_model(model, path)
    else:
        svm_mod.save_model(model, path)


# --- subcommands -----------------------------------------------------------

def cmd_gen_data(cfg):
    kind = cfg["kind"]
    if kind == "circles":
        spec = Circles(cfg["n"] or 200, cfg["inner"], cfg["outer"], cfg["noise"], cfg["seed"])
    elif kind == "lowrank":
        spec = LowRankMulticlass(cfg["n"] or 2000, cfg["features"], cfg["classes"], cfg["rank"],
                                 cfg["label_noise"], cfg["seed"])
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}; choose circles or lowrank")
    data = generate(spec)
    write_csv(data, cfg["out"])
    print(f"wrote {data.n} samples to {cfg['out']}")
    return EXIT_OK


def _load_dataset(path):
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    return load_csv(path)


def cmd_train(cfg):
    data = _load_dataset(cfg["data"])
    test = _load_dataset(cfg["test"]) if cfg["test"] else None
    os.makedirs(cfg["out"], exist_ok=True)
    digest = config_hash(cfg)
    result = run_method(cfg["method"], data, cfg, cfg["seed"], test)
    result.model.meta["config_hash"] = digest
    _save_model(result.model, os.path.join(cfg["out"], "model.cgm"))
    result.trace.to_csv(os.path.join(cfg["out"], "trace.csv"), include_time=False)
    write_meta(os.path.join(cfg["out"], "run.meta"), cfg, digest)
    print(f"method={result.method} final_obj={fmt(result.final_obj)} acc={fmt(result.acc)} iters={result.iters}")
    return EXIT_OK


def cmd_meta_train(cfg):
    variant = cfg["variant"]
    if variant not in l2lc.VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose gamma or direction")
    seed = cfg["seed"]
    if cfg["tasks"] == "qp":
        family = l2lc.qp_tasks(cfg["n"] or 20, cfg["train_tasks"], cfg["val_tasks"], 1, seed)
    elif cfg["tasks"] == "svm-circles":
        family = l2lc.svm_circles_tasks(n_train=cfg["train_tasks"], n_val=cfg["val_tasks"], seed=seed,
                                        C=cfg["C"])
    else:
        raise ConfigError(f"unknown task family {cfg['tasks']!r}; choose qp or svm-circles")
    schedule = parse_schedule(cfg["schedule"]) if cfg["schedule"] else None
    T = cfg["T"] if cfg["T"] is not None else 100
    lr = cfg["lr"] if cfg["lr"] is not None else 1e-3
    os.makedirs(cfg["out"], exist_ok=True)
    digest = config_hash(cfg)
    result = l2lc.meta_train(family, variant, T=T, unroll=cfg["unroll"], meta_epochs=cfg["meta_epochs"], lr=lr,
                             seed=seed, patience=cfg["patience"], beta=cfg["beta"], schedule=schedule)
    l2lc.save_controller(result.controller, os.path.join(cfg["out"], "controller.cgm"),
                         {"config_hash": digest})
    result.to_csv(os.path.join(cfg["out"], "meta_loss.csv"))
    write_meta(os.path.join(cfg["out"], "run.meta"), cfg, digest)
    best = result.val_losses[result.best_epoch - 1] if result.best_epoch else result.initial_val_loss
    print(f"variant={variant} epochs={len(result.train_losses)} best_epoch={result.best_epoch} "
          f"val_loss={fmt(best)}")
    return EXIT_OK


def _bench_data(cfg):
    if cfg["data"]:
        return _load_dataset(cfg["data"])
    kind = cfg["kind"]
    if kind == "qp":
        return random_qp_kernel(cfg["n"] or 20, cfg["data_seed"])
    if kind == "circles":
        return generate(Circles(cfg["n"] or 200, 1.0, 2.0, cfg["noise"], cfg["data_seed"]))
    if kind == "lowrank":
        return generate(LowRankMulticlass(cfg["n"] or 2000, seed=cfg["data_seed"]))
    raise ConfigError(f"unknown bench data kind {kind!r}; choose qp, circles, lowrank or set data")


def cmd_bench(cfg):
    methods = cfg["methods"]
    seeds = cfg["seeds"] if cfg["seeds"] else [default_seed()]
    if len(methods) < 2:
        raise ConfigError("bench needs at least two methods")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) {', '.join(bad)}; valid methods: {', '.join(METHODS)}")
    data = _bench_data(cfg)
    out = cfg["out"]
    os.makedirs(os.path.join(out, "runs"), exist_ok=True)
    digest = config_hash(cfg)
    rows, results = [], {}
    for method in methods:
        for seed in seeds:
            name = f"{method}-seed{seed}"
            run_dir = os.path.join(out, "runs", name)
            os.makedirs(run_dir, exist_ok=True)
            try:
                res = run_method(method, data, cfg, seed)
            except CondGradError as exc:
                rows.append((method, seed, "failed", "", math.nan, math.nan, str(exc).replace(",", ";")))
                continue
            res.trace.to_csv(os.path.join(run_dir, "trace.csv"), include_time=False)
            if res.model is not None:
                res.model.meta["config_hash"] = digest
                _save_model(res.model, os.path.join(run_dir, "model.cgm"))
            results.setdefault(method, []).append(res)
            rows.append((method, seed, "ok", f"runs/{name}/trace.csv", res.final_obj, res.acc, ""))
    summary = ["method,runs,failed,final_obj_mean,final_obj_std,acc_mean,acc_std"]
    for method in methods:
        ok = results.get(method, [])
        objs = np.array([r.final_obj for r in ok])
        accs = np.array([r.acc for r in ok])
        failed = sum(1 for r in rows if r[0] == method and r[2] == "failed")
        stats = [f(a) if len(a) else math.nan for a in (objs, accs) for f in (np.mean, np.std)]
        summary.append(",".join([method, str(len(ok)), str(failed)] + [fmt(s) for s in stats]))
    with open(os.path.join(out, "summary.csv"), "w", newline="\n") as fh:
        fh.write("\n".join(summary) + "\n")
    manifest = [
        f"config_hash={digest}",
        f"seeds={','.join(str(s) for s in seeds)}",
        f"created={datetime.now(timezone.utc).isoformat(timespec='seconds')}",
        "method,seed,status,trace,final_obj,acc,message",
    ]
    manifest += [",".join([m, str(s), st, p, fmt(o), fmt(a), msg]) for m, s, st, p, o, a, msg in rows]
    # written last so a present manifest always describes finished runs
    with open(os.path.join(out, "bundle.manifest"), "w", newline="\n") as fh:
        fh.write("\n".join(manifest) + "\n")
    n_ok = sum(len(v) for v in results.values())
    print(f"bench runs={len(rows)} ok={n_ok} failed={len(rows) - n_ok} out={out}")
    return EXIT_OK if results else EXIT_BENCH


def cmd_predict(cfg):
    path = cfg["model"]
    if not os.path.exists(path):
        raise ConfigError(f"model file not found: {path}")
    with open(path) as fh:
        head = fh.readline().strip()
    x, labels = read_table(cfg["data"], require_label=False)
    lines = []
    if head == "CGM1 svm":
        model = svm_mod.load_model(path)
        scores = model.decision_function(x)
        preds = np.where(scores >= 0, 1, -1)
        lines.append("index,prediction,score")
        lines += [f"{i},{p},{fmt(s)}" for i, (p, s) in enumerate(zip(preds, scores))]
    elif head == "CGM1 softmax":
        model = softmax_mod.load_model(path)
        preds = model.predict(x)
        lines.append("index,prediction")
        lines += [f"{i},{p}" for i, p in enumerate(preds)]
    else:
        raise ConfigError(f"{path} is not a CGM1 svm or softmax model")
    with open(cfg["out"], "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    msg = f"predicted {len(preds)} samples"
    if labels is not None:
        msg += f" acc={fmt(np.mean(preds == labels))}"
    print(msg)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "meta-train": cmd_meta_train,
    "bench": cmd_bench,
    "predict": cmd_predict,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="condgrad", description="Frank-Wolfe networks and learned conditional gradients.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value settings file; flags take precedence")
        for key in COMMAND_KEYS[name]:
            flag = "--" + key.replace("_", "-")
            if SETTINGS[key][0] is _bool:
                p.add_argument(flag, dest=key, nargs="?", const="true", default=None)
            else:
                p.add_argument(flag, dest=key, default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, InvalidArgumentError) as exc:
        parser.print_usage(sys.stderr)
        print(f"condgrad {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FwIterationError as exc:
        code = EXIT_NUMERIC if isinstance(exc.cause, (NumericalError, ArithmeticError)) else EXIT_CONFIG
        print(f"condgrad {args.command}: {exc}", file=sys.stderr)
        return code
    except NumericalError as exc:
        print(f"condgrad {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CondGradError as exc:
        print(f"condgrad {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
