"""Report records, aggregation, schema validation, and curve CSV export.

A report is one JSON document: config echo, one record per (method, seed,
setting), and mean/std aggregates. Raw bit counts keep full float precision;
the kbits convenience field is rounded to 4 significant digits. Writing is
atomic and key-sorted so identical runs produce byte-identical files (the
`created` timestamp aside).
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict
from datetime import datetime, timezone
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from .codes import OnlineReport, compression_ratio, prior_codelength, uniform_codelength
from .errors import ConfigError
from .varcode import VarReport


def _schema(name: str) -> dict:
    with resources.files("mdlprobe.schemas").joinpath(name).open("r") as f:
        return json.load(f)


def report_schema() -> dict:
    return _schema("report.schema.json")


def config_schema() -> dict:
    return _schema("config.schema.json")


def validate_report(report: dict) -> None:
    jsonschema.validate(report, report_schema())


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, config_schema())
    except jsonschema.ValidationError as e:
        raise ConfigError(f"invalid config: {e.message}") from e


def kbits(total_bits: float) -> float:
    """total_bits/1000 rounded to 4 significant digits."""
    return float(f"{total_bits / 1000.0:.4g}")


def _baseline_fields(total_bits: float, train_labels, n: int, K: int) -> dict:
    return {
        "total_bits": total_bits,
        "kbits": kbits(total_bits),
        "compression_uniform": compression_ratio(uniform_codelength(n, K), total_bits)
        if total_bits > 0
        else float("inf"),
        "compression_prior": compression_ratio(prior_codelength(train_labels), total_bits)
        if total_bits > 0
        else float("inf"),
        "n": n,
        "num_classes": K,
    }


def online_record(report: OnlineReport, train_labels, seed: int, setting: str | None = None) -> dict:
    n, K = report.n, report.num_classes
    rec = {
        "method": "online",
        "seed": seed,
        "setting": setting,
        "total_bits": report.total_bits,
        "kbits": kbits(report.total_bits),
        "compression_uniform": compression_ratio(uniform_codelength(n, K), report.total_bits),
        "compression_prior": compression_ratio(prior_codelength(train_labels), report.total_bits),
        "accuracy": report.final_test_accuracy
        if report.final_test_accuracy is not None
        else report.final_train_accuracy,
        "n": n,
        "num_classes": K,
        "data_bits": report.data_bits,
        "model_bits": report.model_bits,
        "model_bits_negative": report.model_bits < 0,
        "first_block_bits": report.first_block_bits,
        "per_block_bits": list(report.per_block_bits),
        "final_ce_bits": report.final_ce_bits,
        "final_test_accuracy": report.final_test_accuracy,
        "final_test_bits_per_target": report.final_test_bits_per_target,
        "learning_curve": [asdict(p) for p in report.curve],
        "schedule": {
            "fractions": list(report.schedule.fractions),
            "timesteps": list(report.schedule.timesteps),
        },
        "sub_epochs": list(report.sub_epochs),
    }
    return rec


def variational_record(
    report: VarReport,
    train_labels,
    seed: int,
    setting: str | None = None,
    test_accuracy: float | None = None,
) -> dict:
    n, K = report.n, report.num_classes
    rec = {
        "method": "variational",
        "seed": seed,
        "setting": setting,
        "total_bits": report.total_bits,
        "kbits": kbits(report.total_bits),
        "compression_uniform": compression_ratio(uniform_codelength(n, K), report.total_bits),
        "compression_prior": compression_ratio(prior_codelength(train_labels), report.total_bits),
        "accuracy": test_accuracy if test_accuracy is not None else report.accuracy,
        "n": n,
        "num_classes": K,
        "data_bits": report.data_bits,
        "model_bits": report.kl_bits,
        "kl_bits": report.kl_bits,
        "pruned_architecture": report.pruned_architecture,
        "mc_samples": report.mc_samples,
        "epochs": report.epochs_trained,
    }
    return rec


def baseline_records(train_labels, n: int, K: int) -> list[dict]:
    uni = uniform_codelength(n, K)
    pri = prior_codelength(train_labels)
    recs = []
    for method, bits in (("uniform", uni), ("prior", pri)):
        rec = {"method": method, "seed": None}
        rec.update(_baseline_fields(bits, train_labels, n, K))
        recs.append(rec)
    return recs


def probe_record(eval_result, train_labels, seed: int, epochs: int, setting: str | None = None) -> dict:
    n = eval_result.n
    K = int(np.max(train_labels)) + 1
    rec = {"method": "probe", "seed": seed, "setting": setting}
    rec.update(_baseline_fields(eval_result.total_bits, train_labels, n, K))
    rec["accuracy"] = eval_result.accuracy
    rec["bits_per_target"] = eval_result.bits_per_target
    rec["epochs"] = epochs
    return rec


def aggregate_records(records: list[dict]) -> list[dict]:
    """Mean/std (sample std, ddof=1) across seeds per (method, setting)."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        if rec.get("seed") is None:
            continue
        groups.setdefault((rec["method"], rec.get("setting")), []).append(rec)
    out = []
    for (method, setting), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or "")):
        totals = np.array([r["total_bits"] for r in recs], dtype=np.float64)
        accs = np.array([r["accuracy"] for r in recs if r.get("accuracy") is not None], dtype=np.float64)
        agg = {
            "method": method,
            "setting": setting,
            "n_seeds": len(recs),
            "mean_total_bits": float(totals.mean()),
            "std_total_bits": float(totals.std(ddof=1)) if len(totals) > 1 else 0.0,
            "mean_kbits": kbits(float(totals.mean())),
            "mean_accuracy": float(accs.mean()) if len(accs) else None,
            "std_accuracy": (float(accs.std(ddof=1)) if len(accs) > 1 else 0.0) if len(accs) else None,
        }
        data = [r.get("data_bits") for r in recs]
        model = [r.get("model_bits") for r in recs]
        if all(v is not None for v in data):
            agg["mean_data_bits"] = float(np.mean(data))
        if all(v is not None for v in model):
            agg["mean_model_bits"] = float(np.mean(model))
        agg["mean_compression_uniform"] = float(np.mean([r["compression_uniform"] for r in recs]))
        out.append(agg)
    return out


def build_report(config_echo: dict, records: list[dict], jobs: int) -> dict:
    blas = os.environ.get("OMP_NUM_THREADS") or os.environ.get("OPENBLAS_NUM_THREADS")
    report = {
        "toolkit_version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "jobs": jobs,
        "blas_threads": int(blas) if blas else None,
        "config": config_echo,
        "results": records,
        "aggregates": aggregate_records(records),
    }
    validate_report(report)
    return report


def write_json_atomic(payload: dict, path: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_curves(report_path: str, out_dir: str) -> list[str]:
    """One CSV per record that carries a learning curve.

    Columns: step_index, t_i, next_block_bits_per_target, test_accuracy,
    cumulative_bits (one row per transmitted block).
    """
    with open(report_path) as f:
        report = json.load(f)
    validate_report(report)
    curved = [r for r in report["results"] if r.get("learning_curve")]
    if not curved:
        raise ConfigError(f"no curve in report {report_path}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for rec in curved:
        setting = f"_{rec['setting']}" if rec.get("setting") else ""
        name = f"curve_{rec['method']}{setting}_seed{rec['seed']}.csv"
        path = os.path.join(out_dir, name)
        lines = ["step_index,t_i,next_block_bits_per_target,test_accuracy,cumulative_bits"]
        for p in rec["learning_curve"]:
            test_acc = "" if p.get("test_accuracy") is None else repr(p["test_accuracy"])
            lines.append(
                f"{p['step_index']},{p['t']},{p['next_block_bits_per_target']!r},"
                f"{test_acc},{p['cumulative_bits']!r}"
            )
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
        written.append(path)
    return written
