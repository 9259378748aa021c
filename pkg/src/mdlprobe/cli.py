"""Command-line surface: dataset generation, coders, baselines, reports.

Subcommands: gen, probe, code online|variational|baselines, report curves,
sweep, run. `run` executes a declarative JSON experiment config; the other
experiment commands build the same config from flags and hand it to the
same engine.

Exit codes: 0 success, 2 bad usage/config, 3 data errors, 4 numerical
failures. Errors are mirrored as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import multiprocessing
import os
import sys

from .codes import DEFAULT_FRACTIONS, make_schedule, online_code
from .datasets import (
    Dataset,
    GaussianTaskSpec,
    LinearTaskSpec,
    gen_gaussian_task,
    gen_linear_task,
    random_features,
    randomize_labels,
    read_dataset,
    shuffle_split,
    with_control_labels,
    write_dataset,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    FormatError,
    LabelRangeError,
    MdlProbeError,
    NumericalError,
    ShapeError,
)
from .numerics import MlpConfig
from .probe_train import TrainConfig, evaluate, evaluate_params, train_probe
from .reports import (
    baseline_records,
    build_report,
    emit_curves,
    online_record,
    probe_record,
    validate_config,
    variational_record,
    write_json_atomic,
)
from .varcode import (
    DEFAULT_PRUNE_THRESHOLD,
    posterior_mean_params,
    train_variational,
    variational_codelength,
)

DEFAULT_PROBE = {
    "arch": "mlp2",
    "hidden": 100,
    "lr": 0.001,
    "batch": 64,
    "epochs": 1000,
    "variational_epochs": 200,
}

DEFAULT_SYNTH = {
    "kind": "linear",
    "dim": 64,
    "classes": 10,
    "informative": None,
    "noise": 0.0,
    "type_dims": 0,
    "mu": 1.0,
    "labels": "task",
    "seed": 0,
    "label_seed": 1,
    "splits": [0.8, 0.1, 0.1],
    "split_seed": 2,
}


# ---------------------------------------------------------------------------
# dataset plumbing


def dataset_paths(arg: str) -> tuple[str, str]:
    """"features,labels" explicit pair, or a prefix expanded to
    <prefix>.features.bin / <prefix>.labels.bin."""
    if "," in arg:
        f, l = arg.split(",", 1)
        return f, l
    return arg + ".features.bin", arg + ".labels.bin"


def load_dataset_arg(arg: str, name: str = "") -> Dataset:
    f, l = dataset_paths(arg)
    return read_dataset(f, l, name=name)


def save_dataset_arg(ds: Dataset, prefix: str) -> tuple[str, str]:
    f, l = dataset_paths(prefix)
    os.makedirs(os.path.dirname(os.path.abspath(f)), exist_ok=True)
    write_dataset(ds, f, l)
    return f, l


def build_synthetic(conf: dict) -> tuple[Dataset, Dataset, Dataset]:
    c = {**DEFAULT_SYNTH, **conf}
    if c["kind"] == "linear":
        spec = LinearTaskSpec(
            n=c["n"],
            d=c["dim"],
            num_classes=c["classes"],
            informative=c["informative"],
            label_noise=c["noise"],
            type_dims=c["type_dims"],
        )
        full = gen_linear_task(spec, c["seed"])
    else:
        full, _ = gen_gaussian_task(GaussianTaskSpec(n=c["n"], d=c["dim"], mu=c["mu"]), c["seed"])
    if c["labels"] == "control":
        if full.type_ids is None:
            raise ConfigError("control labels need type_dims > 0 on a linear task")
        full = with_control_labels(full, c["label_seed"])
    elif c["labels"] == "random":
        full = randomize_labels(full, c["label_seed"])
    try:
        return shuffle_split(full, tuple(c["splits"]), c["split_seed"])
    except ValueError as e:
        raise ConfigError(str(e)) from e


def resolve_data(config: dict) -> tuple[Dataset, Dataset | None, Dataset | None]:
    data = config["data"]
    if "synthetic" in data:
        train, dev, test = build_synthetic(data["synthetic"])
        return train, (dev if dev.n else None), (test if test.n else None)
    if "train" not in data:
        raise ConfigError("data needs either 'train' paths or a 'synthetic' block")
    train = load_dataset_arg(data["train"], "train")
    dev = load_dataset_arg(data["dev"], "dev") if data.get("dev") else None
    test = load_dataset_arg(data["test"], "test") if data.get("test") else None
    return train, dev, test


# ---------------------------------------------------------------------------
# experiment engine


def probe_mlp_config(probe: dict, input_dim: int, num_classes: int) -> MlpConfig:
    arch = probe["arch"]
    h = probe["hidden"]
    hidden = {"linear": [], "mlp1": [h], "mlp2": [h, h]}[arch]
    return MlpConfig(input_dim, hidden, num_classes)


def setting_name(probe: dict) -> str:
    if probe["arch"] == "linear":
        return "linear"
    return f"{probe['arch']}-h{probe['hidden']}"


def _run_one(task) -> tuple[tuple, dict]:
    """One (method, seed, setting) unit of work; it must stay a module-level
    function so worker processes can unpickle it."""
    method, seed, probe_conf, train, dev, test, extras = task
    mlp = probe_mlp_config(probe_conf, train.dim, train.K)
    setting = extras.get("setting")
    if method == "online":
        config = TrainConfig(
            mlp,
            seed=seed,
            lr=probe_conf["lr"],
            batch_size=probe_conf["batch"],
            max_epochs=probe_conf["epochs"],
            annealing_enabled=dev is not None,
        )
        schedule = make_schedule(train.n, extras["fractions"])
        report = online_code(train, config, schedule, dev=dev, test=test)
        return (method, setting or "", seed), online_record(report, train.y, seed, setting)
    if method == "variational":
        config = TrainConfig(
            mlp,
            seed=seed,
            lr=probe_conf["lr"],
            batch_size=probe_conf["batch"],
            max_epochs=probe_conf["variational_epochs"],
            annealing_enabled=False,
        )
        probe = train_variational(train, config)
        report = variational_codelength(
            probe, train, samples=extras["mc_samples"], prune_threshold=extras["prune_threshold"]
        )
        test_acc = None
        if test is not None and test.n:
            pruned = posterior_mean_params(probe, extras["prune_threshold"])
            test_acc = evaluate_params(mlp, pruned, test).accuracy
        return (method, setting or "", seed), variational_record(report, train.y, seed, setting, test_acc)
    if method == "probe":
        config = TrainConfig(
            mlp,
            seed=seed,
            lr=probe_conf["lr"],
            batch_size=probe_conf["batch"],
            max_epochs=probe_conf["epochs"],
            annealing_enabled=dev is not None,
        )
        trained = train_probe(train, dev, config)
        target = test if (test is not None and test.n) else train
        res = evaluate(trained, target)
        return (method, setting or "", seed), probe_record(res, train.y, seed, trained.epochs_run, setting)
    raise ConfigError(f"unknown method {method!r}")


def normalize_config(config: dict) -> dict:
    validate_config(config)
    out = copy.deepcopy(config)
    out["probe"] = {**DEFAULT_PROBE, **config.get("probe", {})}
    out.setdefault("fractions", list(DEFAULT_FRACTIONS))
    out.setdefault("prune_threshold", DEFAULT_PRUNE_THRESHOLD)
    out.setdefault("mc_samples", 8)
    out.setdefault("jobs", 1)
    out.setdefault("out", "mdlprobe-out")
    return out


def run_experiment_config(config: dict, settings: list[dict] | None = None) -> dict:
    """Run every (method, seed[, setting]) combination and build the report.

    `settings` (used by sweep) is a list of probe dicts; records then carry
    a setting name. The report is independent of the jobs level.
    """
    config = normalize_config(config)
    train, dev, test = resolve_data(config)
    method = config["method"]
    methods = ["online", "variational"] if method == "both" else [method]

    records: list[dict] = []
    if "baselines" in methods:
        records.extend(baseline_records(train.y, train.n, train.K))
        methods = [m for m in methods if m != "baselines"]

    tasks = []
    probe_confs = settings if settings is not None else [config["probe"]]
    for probe_conf in probe_confs:
        extras = {
            "fractions": config["fractions"],
            "mc_samples": config["mc_samples"],
            "prune_threshold": config["prune_threshold"],
            "setting": setting_name(probe_conf) if settings is not None else None,
        }
        for m in methods:
            for seed in config["seeds"]:
                tasks.append((m, seed, probe_conf, train, dev, test, extras))

    jobs = config["jobs"]
    if jobs > 1 and len(tasks) > 1:
        with multiprocessing.Pool(processes=min(jobs, len(tasks))) as pool:
            results = pool.map(_run_one, tasks)
    else:
        results = [_run_one(t) for t in tasks]
    results.sort(key=lambda kv: kv[0])
    records.extend(rec for _, rec in results)

    echo = copy.deepcopy(config)
    if settings is not None:
        echo["settings"] = [setting_name(p) for p in settings]
    return build_report(echo, records, jobs)


def write_experiment_outputs(report: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.json")
    write_json_atomic(report, path)
    pruned = [
        f"seed={r['seed']}"
        + (f" setting={r['setting']}" if r.get("setting") else "")
        + f" {r['pruned_architecture']}"
        for r in report["results"]
        if r.get("pruned_architecture")
    ]
    if pruned:
        with open(os.path.join(out_dir, "pruned_arch.txt"), "w") as f:
            f.write("\n".join(pruned) + "\n")
    return path


def run_experiment(config_path: str, overrides: dict | None = None) -> str:
    """Load a config file, apply flag overrides, run, write report.json."""
    try:
        with open(config_path) as f:
            config = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{config_path}: {e}") from e
    if overrides:
        config = apply_overrides(config, overrides)
    report = run_experiment_config(config)
    return write_experiment_outputs(report, normalize_config(config)["out"])


def apply_overrides(config: dict, overrides: dict) -> dict:
    out = copy.deepcopy(config)
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("arch", "hidden", "lr", "batch", "epochs", "variational_epochs"):
            out.setdefault("probe", {})[key] = value
        else:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# argparse wiring


def _add_probe_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", choices=["linear", "mlp1", "mlp2"])
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", required=True, help="dataset prefix or 'features,labels'")
    p.add_argument("--dev")
    p.add_argument("--test")


def _parse_seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s != ""]


def _parse_floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdlprobe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic datasets and label variants")
    gen_sub = gen.add_subparsers(dest="kind", required=True)
    g = gen_sub.add_parser("gaussian", help="two Gaussian classes with known MI")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--dim", type=int, default=8)
    g.add_argument("--mu", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g = gen_sub.add_parser("linear", help="argmax-of-linear-map labels with optional noise/types")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--informative", type=int)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--type-dims", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    for kind, extra in (("control", []), ("random-labels", []), ("random-features", ["hidden"])):
        g = gen_sub.add_parser(kind)
        g.add_argument("--data", required=True)
        if "hidden" in extra:
            g.add_argument("--hidden", type=int, required=True)
        g.add_argument("--seed", type=int, default=0)
        g.add_argument("--out", required=True)
    g = gen_sub.add_parser("split", help="seeded train/dev/test split")
    g.add_argument("--data", required=True)
    g.add_argument("--splits", default="0.8,0.1,0.1")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    pr = sub.add_parser("probe", help="train and evaluate one standard probe")
    _add_data_flags(pr)
    _add_probe_flags(pr)
    pr.add_argument("--seeds", default="0")
    pr.add_argument("--jobs", type=int, default=1)
    pr.add_argument("--out", default="mdlprobe-out")

    code = sub.add_parser("code", help="measure codelengths")
    code_sub = code.add_subparsers(dest="coder", required=True)
    for coder in ("online", "variational", "baselines"):
        c = code_sub.add_parser(coder)
        _add_data_flags(c)
        if coder != "baselines":
            _add_probe_flags(c)
            c.add_argument("--seeds", default="0")
            c.add_argument("--jobs", type=int, default=1)
        if coder == "online":
            c.add_argument("--fractions", help="comma list of ascending percents ending at 100")
        if coder == "variational":
            c.add_argument("--prune-threshold", type=float, default=DEFAULT_PRUNE_THRESHOLD)
            c.add_argument("--mc-samples", type=int, default=8)
        c.add_argument("--out", default="mdlprobe-out")

    rep = sub.add_parser("report", help="post-process a report")
    rep_sub = rep.add_subparsers(dest="what", required=True)
    r = rep_sub.add_parser("curves", help="emit learning-curve CSVs")
    r.add_argument("--report", required=True)
    r.add_argument("--out", required=True)

    sw = sub.add_parser("sweep", help="settings grid x seeds")
    _add_data_flags(sw)
    sw.add_argument("--method", choices=["online", "variational", "both"], default="online")
    sw.add_argument("--archs", default="mlp1,mlp2")
    sw.add_argument("--hiddens", default="1000,500,250,100,50")
    sw.add_argument("--lr", type=float)
    sw.add_argument("--batch", type=int)
    sw.add_argument("--epochs", type=int)
    sw.add_argument("--fractions")
    sw.add_argument("--seeds", default="0")
    sw.add_argument("--prune-threshold", type=float, default=DEFAULT_PRUNE_THRESHOLD)
    sw.add_argument("--mc-samples", type=int, default=8)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", default="mdlprobe-out")

    run = sub.add_parser("run", help="run a declarative experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--method", choices=["online", "variational", "baselines", "both"])
    run.add_argument("--seeds")
    _add_probe_flags(run)
    run.add_argument("--fractions")
    run.add_argument("--prune-threshold", type=float, dest="prune_threshold")
    run.add_argument("--mc-samples", type=int, dest="mc_samples")
    run.add_argument("--jobs", type=int)
    run.add_argument("--out")
    return parser


def _flag_config(args, method: str) -> dict:
    data = {"train": args.train}
    if args.dev:
        data["dev"] = args.dev
    if args.test:
        data["test"] = args.test
    config = {"method": method, "seeds": _parse_seeds(getattr(args, "seeds", "0")), "data": data}
    probe = {}
    for key in ("arch", "hidden", "lr", "batch", "epochs"):
        val = getattr(args, key, None)
        if val is not None:
            probe[key] = val
    if probe:
        config["probe"] = probe
    if getattr(args, "fractions", None):
        config["fractions"] = _parse_floats(args.fractions)
    if getattr(args, "prune_threshold", None) is not None:
        config["prune_threshold"] = args.prune_threshold
    if getattr(args, "mc_samples", None) is not None:
        config["mc_samples"] = args.mc_samples
    config["jobs"] = getattr(args, "jobs", 1)
    config["out"] = args.out
    return config


def _cmd_gen(args) -> int:
    if args.kind == "gaussian":
        ds, mi = gen_gaussian_task(GaussianTaskSpec(args.n, args.dim, args.mu), args.seed)
        f, l = save_dataset_arg(ds, args.out)
        print(json.dumps({"features": f, "labels": l, "n": ds.n, "true_mi_bits": mi}))
        return 0
    if args.kind == "linear":
        spec = LinearTaskSpec(
            n=args.n,
            d=args.dim,
            num_classes=args.classes,
            informative=args.informative,
            label_noise=args.noise,
            type_dims=args.type_dims,
        )
        ds = gen_linear_task(spec, args.seed)
        f, l = save_dataset_arg(ds, args.out)
        print(json.dumps({"features": f, "labels": l, "n": ds.n, "classes": ds.K}))
        return 0
    if args.kind == "split":
        ds = load_dataset_arg(args.data)
        splits = tuple(_parse_floats(args.splits))
        try:
            parts = shuffle_split(ds, splits, args.seed)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        paths = {}
        for part, suffix in zip(parts, ("train", "dev", "test")):
            f, l = save_dataset_arg(part, f"{args.out}.{suffix}")
            paths[suffix] = {"features": f, "labels": l, "n": part.n}
        print(json.dumps(paths))
        return 0
    ds = load_dataset_arg(args.data)
    if args.kind == "control":
        out = with_control_labels(ds, args.seed)
    elif args.kind == "random-labels":
        out = randomize_labels(ds, args.seed)
    else:
        out = random_features(ds, args.hidden, args.seed)
    f, l = save_dataset_arg(out, args.out)
    print(json.dumps({"features": f, "labels": l, "n": out.n}))
    return 0


def _cmd_sweep(args) -> int:
    config = _flag_config(args, args.method)
    config.pop("probe", None)
    settings = []
    for arch in [a.strip() for a in args.archs.split(",") if a.strip()]:
        if arch not in ("linear", "mlp1", "mlp2"):
            raise ConfigError(f"unknown arch {arch!r}")
        hiddens = [1] if arch == "linear" else [int(h) for h in args.hiddens.split(",") if h]
        for h in hiddens:
            probe = dict(DEFAULT_PROBE)
            probe["arch"] = arch
            probe["hidden"] = h
            for key in ("lr", "batch", "epochs"):
                val = getattr(args, key, None)
                if val is not None:
                    probe[key] = val
            settings.append(probe)
    report = run_experiment_config(config, settings=settings)
    path = write_experiment_outputs(report, args.out)
    print(path)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "probe":
            report = run_experiment_config(_flag_config(args, "probe"))
            print(write_experiment_outputs(report, args.out))
            return 0
        if args.command == "code":
            report = run_experiment_config(_flag_config(args, args.coder))
            print(write_experiment_outputs(report, args.out))
            return 0
        if args.command == "report":
            for path in emit_curves(args.report, args.out):
                print(path)
            return 0
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "run":
            overrides = {
                "method": args.method,
                "seeds": _parse_seeds(args.seeds) if args.seeds else None,
                "arch": args.arch,
                "hidden": args.hidden,
                "lr": args.lr,
                "batch": args.batch,
                "epochs": args.epochs,
                "fractions": _parse_floats(args.fractions) if args.fractions else None,
                "prune_threshold": args.prune_threshold,
                "mc_samples": args.mc_samples,
                "jobs": args.jobs,
                "out": args.out,
            }
            print(run_experiment(args.config, overrides))
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except MdlProbeError as e:
        return _fail(e)
    except OSError as e:
        return _fail(e, code=3)
    except ValueError as e:
        return _fail(e, code=2)


def _fail(exc: Exception, code: int | None = None) -> int:
    if code is None:
        if isinstance(exc, (ConfigError,)):
            code = 2
        elif isinstance(exc, (FormatError, ConsistencyError, LabelRangeError, ShapeError)):
            code = 3
        elif isinstance(exc, NumericalError):
            code = 4
        else:
            code = 2
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
