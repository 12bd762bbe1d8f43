"""Command-line entry point for reproducible runs.

Subcommands: gen-data, train, score, eval, sweep, theory.  Runs are driven by
a JSON config (unknown keys are rejected with their path); flags override the
file, the MAW_SEED environment variable overrides the file's seeds, and a
--seed flag overrides both.  Every output file embeds the resolved config and
seed.  Exit codes: 0 ok, 2 bad config, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

from . import evaluation as evalx
from . import model as model_mod
from . import theory
from .errors import ConfigError, DataError, MawError, MetricError, NumericalError

DEFAULT_CONFIG = {
    "data": {
        "source": "synthetic",  # synthetic | csv
        "path": None,
        "features": 20,
        "rank": 1,
        "noise": 0.1,
        "family_seed": 0,
    },
    "model": {
        "d": 2,
        "dprime": 128,
        "eta": 5.0 / 6.0,
        "samples": 5,
        "epochs": 100,
        "batch_size": 128,
        "lr_vae": 5e-5,
        "lr_critic": 5e-4,
        "encoder_widths": [32, 64, 128],
        "decoder_widths": [128, 64, 32],
        "critic_widths": [32, 64, 128],
    },
    "variant": "maw",
    "split": {
        "n_train": 500,
        "c": 0.2,
        "n_test": 200,
        "c_tests": [0.1, 0.3, 0.5, 0.7, 0.9],
        "seed": 0,
    },
    "seeds": [0, 1, 2],
    "sweep": {"axis": "variant", "values": ["maw", "vae"]},
    "output_dir": "maw-runs",
}


# --------------------------------------------------------------- config plumbing


def _check_keys(user, defaults, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"expected an object at {path or 'top level'}")
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(defaults[key], dict) and defaults[key]:
            _check_keys(value, defaults[key], here)


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(config, assignment: str):
    if "=" not in assignment:
        raise ConfigError(f"--set needs key.path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    walked = []
    for key in keys[:-1]:
        walked.append(key)
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config key: {'.'.join(walked)}")
        node = node[key]
    leaf = keys[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key: {path.strip()}")
    node[leaf] = value


def load_config(args) -> dict:
    user = {}
    if args.config is not None:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _check_keys(user, DEFAULT_CONFIG)
    config = _deep_merge(DEFAULT_CONFIG, user)
    for assignment in args.set or []:
        _apply_set(config, assignment)
    env_seed = os.environ.get("MAW_SEED")
    if env_seed is not None:
        try:
            config["seeds"] = [int(env_seed)]
        except ValueError as exc:
            raise ConfigError(f"MAW_SEED must be an integer, got {env_seed!r}") from exc
    if args.seed is not None:
        config["seeds"] = [int(args.seed)]
    if args.output_dir is not None:
        config["output_dir"] = args.output_dir
    if getattr(args, "variant", None) is not None:
        config["variant"] = args.variant
    if getattr(args, "epochs", None) is not None:
        config["model"]["epochs"] = args.epochs
    if not config["seeds"]:
        raise ConfigError("seeds must be a nonempty list")
    return config


def _hyperparams(config) -> model_mod.Hyperparams:
    try:
        return model_mod.Hyperparams(variant=config["variant"], **config["model"])
    except TypeError as exc:
        raise ConfigError(f"bad model section: {exc}") from exc


def _family(config):
    data = config["data"]
    if data["source"] == "synthetic":
        return evalx.SyntheticFamily(
            dim=data["features"], rank=data["rank"],
            noise=data["noise"], seed=data["family_seed"],
        )
    if data["source"] == "csv":
        if not data["path"]:
            raise ConfigError("data.path is required for data.source = csv")
        return evalx.PoolFamily(evalx.load_csv(data["path"]), seed=data["family_seed"])
    raise ConfigError(f"data.source must be synthetic or csv, got {data['source']!r}")


def _split(config) -> evalx.SplitSpec:
    s = config["split"]
    return evalx.SplitSpec(
        n_train=s["n_train"], c=s["c"], n_test=s["n_test"],
        c_tests=tuple(s["c_tests"]), seed=s["seed"],
    )


def _resolve_train_set(config, seed: int) -> evalx.Dataset:
    data = config["data"]
    if data["source"] == "csv":
        if not data["path"]:
            raise ConfigError("data.path is required for data.source = csv")
        return evalx.load_csv(data["path"])
    split = _split(config)
    family = _family(config)
    return family.sample(
        split.n_train, split.n_train_outliers,
        sample_seed=evalx._train_seed(split.seed, seed),
    )


# --------------------------------------------------------------- output writers


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)


def _config_comment(config, seed) -> str:
    body = json.dumps({"config": config, "seed": seed}, sort_keys=True)
    return f"# {body}\n"


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_dataset_csv(path, dataset, config, seed):
    dim = dataset.features.shape[1]
    with open(path, "w") as fh:
        fh.write(_config_comment(config, seed))
        fh.write(",".join(f"f{i + 1}" for i in range(dim)) + ",label\n")
        for row, label in zip(dataset.features, dataset.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


def _write_trace_csv(path, trace, config, seed):
    with open(path, "w") as fh:
        fh.write(_config_comment(config, seed))
        fh.write("epoch,loss_vae,loss_critic,loss_gen\n")
        for row in trace:
            fh.write(
                f"{row['epoch']},{row['loss_vae']!r},{row['loss_critic']!r},{row['loss_gen']!r}\n"
            )


def _write_scores_csv(path, scores, labels, config, seed):
    with open(path, "w") as fh:
        fh.write(_config_comment(config, seed))
        fh.write("index,score,label\n")
        for i, score in enumerate(scores):
            fh.write(f"{i},{float(score)!r},{int(labels[i])}\n")


def _write_report_csv(path, rows, config, seed, extra_cols=()):
    cols = list(extra_cols) + ["variant", "c", "auc_mean", "auc_std", "ap_mean", "ap_std"]
    with open(path, "w") as fh:
        fh.write(_config_comment(config, seed))
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row[c]) for c in cols) + "\n")


def _csv_cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


# --------------------------------------------------------------- subcommands


def cmd_gen_data(config) -> int:
    seed = config["seeds"][0]
    split = _split(config)
    family = _family(config)
    dataset = family.sample(
        split.n_train, split.n_train_outliers,
        sample_seed=evalx._train_seed(split.seed, seed),
    )
    _ensure_dir(config["output_dir"])
    out = os.path.join(config["output_dir"], "dataset.csv")
    _write_dataset_csv(out, dataset, config, seed)
    print(f"wrote {out} ({dataset.features.shape[0]} rows, {dataset.n_outliers} outliers)")
    return 0


def cmd_train(config) -> int:
    seed = config["seeds"][0]
    hp = _hyperparams(config)
    train_set = _resolve_train_set(config, seed)
    model, trace = model_mod.train(train_set.features, hp, seed=seed)
    _ensure_dir(config["output_dir"])
    ckpt = os.path.join(config["output_dir"], "checkpoint.json")
    payload = model.to_payload()
    payload["config"] = config
    payload["seed"] = seed
    _write_json(ckpt, payload)
    trace_path = os.path.join(config["output_dir"], "loss_trace.csv")
    _write_trace_csv(trace_path, trace, config, seed)
    print(f"wrote {ckpt} and {trace_path} ({len(trace)} epochs)")
    return 0


def cmd_score(config, args) -> int:
    seed = config["seeds"][0]
    if not os.path.exists(args.checkpoint):
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    with open(args.checkpoint) as fh:
        payload = json.load(fh)
    model = model_mod.MawModel.from_payload(payload)
    if args.data is not None:
        dataset = evalx.load_csv(args.data)
    else:
        split = _split(config)
        family = _family(config)
        dataset = family.sample(
            split.n_test, split.n_test_outliers(split.c_tests[0]),
            sample_seed=evalx._test_seed(split.seed, seed, 0),
        )
    scores = model_mod.score_batch(model, dataset.features, seed=seed)
    _ensure_dir(config["output_dir"])
    out = os.path.join(config["output_dir"], "scores.csv")
    _write_scores_csv(out, scores, dataset.labels, config, seed)
    print(f"wrote {out} ({len(scores)} rows)")
    return 0


def cmd_eval(config) -> int:
    hp = _hyperparams(config)
    family = _family(config)
    split = _split(config)
    reports = evalx.run_experiment(family, [split], [config["variant"]], config["seeds"], hp)
    rows = [r.to_dict() for r in reports]
    _ensure_dir(config["output_dir"])
    seed = config["seeds"][0]
    payload = {"config": config, "seed": seed, "reports": rows}
    _write_json(os.path.join(config["output_dir"], "report.json"), payload)
    _write_report_csv(os.path.join(config["output_dir"], "report.csv"), rows, config, seed)
    for row in rows:
        print(
            f"variant={row['variant']} c={row['c']} "
            f"auc={row['auc_mean']:.4f}+-{row['auc_std']:.4f} "
            f"ap={row['ap_mean']:.4f}+-{row['ap_std']:.4f}"
        )
    return 0


SWEEP_AXES = ("variant", "d", "eta", "c")


def cmd_sweep(config) -> int:
    axis = config["sweep"]["axis"]
    values = config["sweep"]["values"]
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep.values must be nonempty")
    family = _family(config)
    rows = []
    for value in values:
        cell = copy.deepcopy(config)
        if axis == "variant":
            cell["variant"] = value
        elif axis == "c":
            cell["split"]["c"] = value
        else:
            cell["model"][axis] = value
        hp = _hyperparams(cell)
        reports = evalx.run_experiment(
            family, [_split(cell)], [cell["variant"]], cell["seeds"], hp
        )
        for rep in reports:
            row = rep.to_dict()
            row["axis"] = axis
            row["value"] = value
            rows.append(row)
    _ensure_dir(config["output_dir"])
    seed = config["seeds"][0]
    payload = {"config": config, "seed": seed, "reports": rows}
    _write_json(os.path.join(config["output_dir"], "sweep_report.json"), payload)
    _write_report_csv(
        os.path.join(config["output_dir"], "sweep_report.csv"), rows, config, seed,
        extra_cols=("axis", "value"),
    )
    for row in rows:
        print(
            f"{axis}={row['value']} variant={row['variant']} c={row['c']} "
            f"auc={row['auc_mean']:.4f}+-{row['auc_std']:.4f}"
        )
    return 0


def cmd_theory(config) -> int:
    seed = config["seeds"][0]
    report = theory.verification_report(seed=seed)
    report["config"] = config
    _ensure_dir(config["output_dir"])
    out = os.path.join(config["output_dir"], "theory_report.json")
    _write_json(out, report)
    for name, section in report["sections"].items():
        status = "pass" if section["pass"] else "FAIL"
        print(f"{name}: {status} ({len(section['instances'])} instances)")
    print(f"wrote {out}; all_pass={report['all_pass']}")
    if not report["all_pass"]:
        print(
            json.dumps({"error": {"code": 1, "kind": "verification", "detail": "a section failed"}}),
            file=sys.stderr,
        )
        return 1
    return 0


# --------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maw",
        description="Robust novelty detection with a mixture-latent autoencoder.",
    )
    parser.add_argument("--config", help="JSON run config (defaults are built in)")
    parser.add_argument("--output-dir", help="directory for output files")
    parser.add_argument("--seed", type=int, help="override the config seeds with one seed")
    parser.add_argument(
        "--set", action="append", metavar="KEY.PATH=VALUE",
        help="override any config value (JSON-parsed); repeatable",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", help="write a synthetic contaminated dataset CSV")
    p = sub.add_parser("train", help="train a detector; writes checkpoint + loss trace")
    p.add_argument("--variant", choices=model_mod.VARIANTS)
    p.add_argument("--epochs", type=int)
    p = sub.add_parser("score", help="score a dataset with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="CSV to score (defaults to a config-driven test split)")
    p = sub.add_parser("eval", help="train/score over seeds; writes a metric report")
    p.add_argument("--variant", choices=model_mod.VARIANTS)
    p.add_argument("--epochs", type=int)
    p = sub.add_parser("sweep", help="repeat eval along a config axis (variant/d/eta/c)")
    p.add_argument("--epochs", type=int)
    sub.add_parser("theory", help="verify the closed-form results numerically")
    return parser


def _fail(code: int, kind: str, exc: Exception) -> int:
    line = json.dumps({"error": {"code": code, "kind": kind, "detail": str(exc)}})
    print(line, file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "score":
            return cmd_score(config, args)
        if args.command == "eval":
            return cmd_eval(config)
        if args.command == "sweep":
            return cmd_sweep(config)
        if args.command == "theory":
            return cmd_theory(config)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        return _fail(2, "config", exc)
    except (DataError, MetricError) as exc:
        return _fail(3, "data", exc)
    except NumericalError as exc:
        return _fail(4, "numerical", exc)
    except MawError as exc:
        return _fail(2, "config", exc)


if __name__ == "__main__":
    sys.exit(main())
