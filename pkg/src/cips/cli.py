"""Command-line entry point: ``cips {simulate,impute,train,predict,evaluate,version}``.

Configuration is one JSON document with a global ``seed`` and a section per
subcommand.  A ``--config`` file is merged over the packaged defaults,
then ``--set key=value`` overrides apply (dotted keys; a key without a
section prefix refers to the running subcommand's section).  Relative paths
resolve against ``$CIPS_OUTPUT_ROOT`` when set, else the working directory.

Every run writes its outputs to a fresh temporary directory that is renamed
into place only on success, together with ``resolved_config.json``.
Exit codes: 0 success, 2 invalid configuration, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import shutil
import sys
import tempfile
from importlib import resources
from pathlib import Path

from . import __version__
from .data import load_dataset, read_schema, save_dataset, simulate_missingness, split, write_schema
from .errors import CipsError, ConfigError
from .evaluate import MODELS, HarnessConfig, run_scenarios, write_report
from .impute import ImputedSet, Imputer, load_imputed, multiple_impute, save_imputed, single_mean_impute
from .intervene import predict_do_batch, with_treatment, write_predictions
from .scm_vae import VaeConfig, load_model, save_model, train
from .synthcausal import ScmConfig, generate, intervention_draw, oracle_do, oracle_do_mc, save_scm_config, split_blocks

COMMANDS = ("simulate", "impute", "train", "predict", "evaluate")
OUTPUT_ROOT_ENV = "CIPS_OUTPUT_ROOT"


def default_config() -> dict:
    text = resources.files("cips").joinpath("configs/default.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _parse_set(item: str, command: str) -> dict:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    if parts[0] not in (*COMMANDS, "seed"):
        parts = [command, *parts]
    tree = value
    for p in reversed(parts):
        tree = {p: tree}
    return tree


def load_config(path, sets, command) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        cfg = _merge(cfg, raw)
    for item in sets or ():
        cfg = _merge(cfg, _parse_set(item, command))
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    return cfg


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or ".")


def _path(p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else output_root() / p


def _require(section, *keys):
    for key in keys:
        value = section.get(key)
        if value is None or not _path(value).exists():
            raise ConfigError(f"input {key!r} not found: {value}")


def _atomic_dir(target: Path, fill, resolved: dict):
    """Build the output in a sibling temp dir, then swap it into ``target``."""
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        fill(tmp)
        (tmp / "resolved_config.json").write_text(
            json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        old = None
        if target.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{target.name}.old.", dir=target.parent))
            os.replace(target, old / "dir")
        os.replace(tmp, target)
        if old is not None:
            shutil.rmtree(old)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _scm(section, seed) -> ScmConfig:
    return ScmConfig.from_json({**section, "seed": seed})


def _vae(section, seed) -> VaeConfig:
    try:
        return VaeConfig.from_json({**section, "seed": seed})
    except (TypeError, CipsError) as exc:
        raise ConfigError(f"invalid vae section: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands: each validates fully, then returns a writer for the output dir


def cmd_simulate(cfg, jobs):
    sec, seed = cfg["simulate"], cfg["seed"]
    scm = _scm(sec["scm"], seed)
    rates = sec["rates"]
    if sec["scenario"] not in rates:
        raise ConfigError(f"unknown scenario {sec['scenario']!r}")

    def fill(d: Path):
        ds, handle = generate(scm)
        tr, va, te = split(ds, 0.6, 0.2, seed)
        t_do = intervention_draw(scm, te.n_rows, seed)
        x, _, m = split_blocks(te)
        truth = oracle_do(handle, x, m, t_do) if scm.outcome_form == "linear" \
            else oracle_do_mc(handle, x, m, t_do, 2000, seed)
        query = simulate_missingness(with_treatment(te, t_do), sec["scenario"], seed, rates,
                                     sec["missing_mode"])
        write_schema(ds.schema, d / "schema.json")
        save_scm_config(scm, d / "scm_config.json")
        for name, part in (("data", ds), ("train", tr), ("valid", va), ("test", query)):
            save_dataset(part, d / f"{name}.csv")
        with open(d / "oracle.csv", "w", encoding="utf-8") as fh:
            fh.write("row_id,y_do\n")
            for rid, v in zip(te.row_ids, truth):
                fh.write(f"{int(rid)},{float(v)!r}\n")
    return sec["out"], fill


def cmd_impute(cfg, jobs):
    sec, seed = cfg["impute"], cfg["seed"]
    _require(sec, "data", "schema")
    if sec["method"] not in ("fcs", "smi"):
        raise ConfigError(f"unknown imputation method {sec['method']!r}")
    if sec["pool"] is not None:
        _require(sec, "pool")

    def fill(d: Path):
        ds = load_dataset(_path(sec["data"]), _path(sec["schema"]))
        if sec["pool"] is not None:
            pool = load_dataset(_path(sec["pool"]), schema=ds.schema)
            imputer = Imputer(pool, sec["method"], sec["M"], sec["burn_in"], jobs)
            completions = imputer.complete(ds, seed)
            prov = {"method": sec["method"], "seed": seed, "M": len(completions),
                    "burn_in": sec["burn_in"], "pool": str(sec["pool"])}
            iset = ImputedSet(completions, ds.mask.copy(), prov)
        elif sec["method"] == "fcs":
            iset = multiple_impute(ds, sec["M"], sec["burn_in"], seed, jobs=jobs)
        else:
            iset = ImputedSet([single_mean_impute(ds)], ds.mask.copy(), {"method": "smi", "M": 1})
        save_imputed(iset, d)
        write_schema(ds.schema, d / "schema.json")
    return sec["out"], fill


def cmd_train(cfg, jobs):
    sec, seed = cfg["train"], cfg["seed"]
    vae = _vae(sec["vae"], seed)
    _require(sec, "schema")
    if sec["imputed"] is None:
        _require(sec, "data")
    else:
        _require(sec, "imputed")
    if sec["valid"] is not None:
        _require(sec, "valid")

    def fill(d: Path):
        schema = read_schema(_path(sec["schema"]))
        valid = load_dataset(_path(sec["valid"]), schema=schema) if sec["valid"] is not None else None
        if sec["imputed"] is None:
            model = train(load_dataset(_path(sec["data"]), schema=schema), valid, vae)
            save_model(model, d / "model.json")
        else:
            iset = load_imputed(_path(sec["imputed"]), schema)
            for k, ds in enumerate(iset.datasets):
                save_model(train(ds, valid, vae), d / f"model_{k}.json")
    return sec["out"], fill


def cmd_predict(cfg, jobs):
    sec, seed = cfg["predict"], cfg["seed"]
    _require(sec, "model", "data", "schema")
    if sec["method"] not in ("fcs", "smi"):
        raise ConfigError(f"unknown imputation method {sec['method']!r}")
    if sec["pool"] is not None:
        _require(sec, "pool")
    if sec["L"] < 1 or sec["M"] < 1:
        raise ConfigError("L and M must be >= 1")

    def fill(d: Path):
        model = load_model(_path(sec["model"]))
        ds = load_dataset(_path(sec["data"]), _path(sec["schema"]))
        imputer = None
        if sec["pool"] is not None:
            pool = load_dataset(_path(sec["pool"]), schema=ds.schema)
            imputer = Imputer(pool, sec["method"], sec["M"], sec["burn_in"], jobs)
        result = predict_do_batch(model, imputer, ds, sec["L"], seed=seed,
                                  sample_aux=bool(sec["sample_aux"]), jobs=jobs)
        write_predictions(d / "predictions.csv", ds.row_ids, result, sec["L"], result.M, seed)
    return sec["out"], fill


def cmd_evaluate(cfg, jobs):
    sec, seed = cfg["evaluate"], cfg["seed"]
    scm = _scm(sec["scm"], seed)
    try:
        harness = HarnessConfig(vae=_vae(sec["vae"], seed), L=sec["L"], M=sec["M"],
                                burn_in=sec["burn_in"], rates=dict(sec["rates"]),
                                missing_mode=sec["missing_mode"], knn_p=sec["knn_p"],
                                oracle_samples=sec["oracle_samples"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if not sec["models"] or any(m not in MODELS for m in sec["models"]):
        raise ConfigError(f"models must be a nonempty subset of {list(MODELS)}")
    if not sec["scenarios"] or any(s not in sec["rates"] for s in sec["scenarios"]):
        raise ConfigError("scenarios must be a nonempty list of keys of 'rates'")
    if not sec["seeds"] or any(not isinstance(s, int) or s < 0 for s in sec["seeds"]):
        raise ConfigError("seeds must be a nonempty list of non-negative integers")

    def fill(d: Path):
        report = run_scenarios(scm, sec["models"], sec["scenarios"], sec["seeds"], harness, jobs)
        write_report(report, d)
    return sec["out"], fill


HANDLERS = {"simulate": cmd_simulate, "impute": cmd_impute, "train": cmd_train,
            "predict": cmd_predict, "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cips", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("version", help="print the package version")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON config merged over the packaged defaults")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config value (JSON-parsed, dotted key)")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers (results do not depend on it)")
        p.add_argument("--out", help="output directory (overrides the section's 'out')")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(f"cips {__version__}")
        return 0
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, args.set, args.command)
        if args.out is not None:
            cfg[args.command]["out"] = args.out
        out, fill = HANDLERS[args.command](cfg, args.jobs)
    except (ConfigError, CipsError, TypeError, ValueError) as exc:
        print(f"cips {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    resolved = {"seed": cfg["seed"], args.command: cfg[args.command]}
    try:
        _atomic_dir(_path(out), fill, resolved)
    except (CipsError, OSError) as exc:
        print(f"cips {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(str(_path(out)))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
