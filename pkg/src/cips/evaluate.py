"""Scenario harness: models x missingness scenarios x seeds on the synthetic SCM.

Per seed: generate a dataset, split it 60/20/20, assign randomised
treatments to the test rows (a do() intervention), mask test confounders per
scenario, complete them, predict and score against the exact interventional
oracle.  The VAE and the baselines are fitted once per seed on the complete
training split and shared across scenarios.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import select_knn, select_lasso
from .data import DEFAULT_RATES, simulate_missingness, split
from .errors import DomainError
from .impute import Imputer
from .intervene import DEFAULT_L, predict_do_batch, with_treatment
from .layout import encode_features
from .metrics import mape
from .scm_vae import VaeConfig, train
from .synthcausal import ScmConfig, generate, intervention_draw, oracle_do, oracle_do_mc, split_blocks

MODELS = ("cips", "cips_smi", "lasso", "knn", "lasso_fcsmi", "knn_fcsmi")
DEFAULT_MODELS = ("cips", "cips_smi", "lasso", "knn")
SCENARIOS = ("none", "moderate", "substantial")
LABELS = {"cips": "CIPS (FCSMI)", "cips_smi": "CIPS (SMI)", "lasso": "Lasso", "knn": "kNN",
          "lasso_fcsmi": "Lasso (FCSMI)", "knn_fcsmi": "kNN (FCSMI)"}
ZERO_TOL = 1e-6


@dataclass(frozen=True)
class HarnessConfig:
    """Settings shared by every cell of a run (everything except the grid)."""

    vae: VaeConfig = VaeConfig()
    L: int = DEFAULT_L
    M: int = 5
    burn_in: int = 10
    rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    missing_mode: str = "mcar"
    knn_p: float = 2.0
    oracle_samples: int = 2000

    def to_json(self) -> dict:
        return {"vae": self.vae.to_json(), "L": self.L, "M": self.M, "burn_in": self.burn_in,
                "rates": dict(self.rates), "missing_mode": self.missing_mode,
                "knn_p": self.knn_p, "oracle_samples": self.oracle_samples}


@dataclass
class CellResult:
    seed: int
    model: str
    scenario: str
    mape: float = math.nan
    n_scored: int = 0
    n_excluded: int = 0
    mean_stderr: float = math.nan
    error: str = ""


@dataclass
class ScenarioReport:
    models: tuple
    scenarios: tuple
    seeds: tuple
    cells: list  # CellResult per (seed, model, scenario)
    provenance: dict

    def summary(self) -> list[dict]:
        """One row per (model, scenario): across-seed mean, std (ddof=1) and standard error."""
        rows = []
        for model in self.models:
            for scenario in self.scenarios:
                got = [c for c in self.cells if c.model == model and c.scenario == scenario]
                ok = np.array([c.mape for c in got if not c.error])
                errors = [f"seed {c.seed}: {c.error}" for c in got if c.error]
                n = ok.size
                std = float(ok.std(ddof=1)) if n > 1 else (0.0 if n == 1 else math.nan)
                rows.append({"model": model, "scenario": scenario, "n_seeds": n,
                             "mape_mean": float(ok.mean()) if n else math.nan,
                             "mape_std": std, "mape_se": std / math.sqrt(n) if n else math.nan,
                             "n_excluded": int(sum(c.n_excluded for c in got)),
                             "errors": "; ".join(errors)})
        return rows

    def cell(self, model, scenario) -> dict:
        for row in self.summary():
            if row["model"] == model and row["scenario"] == scenario:
                return row
        raise KeyError((model, scenario))

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["model", "scenario", "n_seeds", "mape_mean", "mape_std", "mape_se", "n_excluded", "errors"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.summary():
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()

    def per_seed_csv(self) -> str:
        buf = io.StringIO()
        cols = ["seed", "model", "scenario", "mape", "n_scored", "n_excluded", "mean_stderr", "error"]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for c in self.cells:
            writer.writerow([c.seed, c.model, c.scenario, repr(c.mape), c.n_scored, c.n_excluded,
                             repr(c.mean_stderr), c.error])
        return buf.getvalue()

    def to_table(self) -> str:
        """Plain-text grid in the layout of the paper's results table (mean +- standard error over seeds)."""
        width = max(len(LABELS.get(m, m)) for m in self.models) + 2
        lines = [" " * width + "".join(f"{s:>20}" for s in self.scenarios)]
        for model in self.models:
            parts = []
            for scenario in self.scenarios:
                row = self.cell(model, scenario)
                parts.append(f"{'error':>20}" if row["n_seeds"] == 0
                             else f"{row['mape_mean']:>11.2f} +- {row['mape_se']:<5.2f}")
            lines.append(f"{LABELS.get(model, model):<{width}}" + "".join(parts))
        return "\n".join(lines) + "\n"


def _knn_scaler(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return mu, np.where(sd > 0, sd, 1.0)


class _SeedRun:
    """Fitted models and test data for one seed; each cell is scored independently."""

    def __init__(self, synth: ScmConfig, harness: HarnessConfig, seed: int, models):
        self.seed = seed
        self.harness = harness
        self.synth = cfg = replace(synth, seed=seed)
        ds, handle = generate(cfg)
        self.train, self.valid, test = split(ds, 0.6, 0.2, seed)
        t_do = intervention_draw(cfg, test.n_rows, seed)
        self.test = with_treatment(test, t_do)
        x, _, m = split_blocks(test)
        self.truth = oracle_do(handle, x, m, t_do) if cfg.outcome_form == "linear" \
            else oracle_do_mc(handle, x, m, t_do, harness.oracle_samples, seed)
        self.keep = np.abs(self.truth) >= ZERO_TOL
        self.fitted = {}
        self.fit_errors = {}
        self._fit(models)

    def _fit(self, models):
        fams = {m.split("_")[0] for m in models}
        try:
            if "cips" in fams:
                self.fitted["cips"] = train(self.train, self.valid, replace(self.harness.vae, seed=self.seed))
        except Exception as exc:  # a failed fit only fails its cells
            self.fit_errors["cips"] = f"{type(exc).__name__}: {exc}"
        Xtr, Xva = encode_features(self.train), encode_features(self.valid)
        ytr = self.train.values[:, self.train.outcome_index]
        yva = self.valid.values[:, self.valid.outcome_index]
        for fam in ("lasso", "knn"):
            if fam not in fams:
                continue
            try:
                if fam == "lasso":
                    self.fitted[fam] = select_lasso(Xtr, ytr, Xva, yva)
                else:
                    mu, sd = _knn_scaler(Xtr)
                    self.fitted[fam] = (select_knn((Xtr - mu) / sd, ytr, (Xva - mu) / sd, yva,
                                                   p=self.harness.knn_p), mu, sd)
            except Exception as exc:
                self.fit_errors[fam] = f"{type(exc).__name__}: {exc}"

    def _baseline_predict(self, fam, ds):
        X = encode_features(ds)
        if fam == "lasso":
            return self.fitted[fam].predict(X)
        model, mu, sd = self.fitted[fam]
        return model.predict((X - mu) / sd)

    def predict(self, model, query):
        fam, _, variant = model.partition("_")
        h = self.harness
        if fam == "cips":
            method = "smi" if variant == "smi" else "fcs"
            imputer = Imputer(self.train, method, h.M, h.burn_in)
            res = predict_do_batch(self.fitted["cips"], imputer, query, h.L, seed=self.seed)
            return res.mean, float(res.stderr.mean())
        method = "fcs" if variant == "fcsmi" else "smi"
        completions = Imputer(self.train, method, h.M, h.burn_in).complete(query, self.seed)
        preds = np.vstack([self._baseline_predict(fam, c) for c in completions])
        sd = float(preds.std(axis=0, ddof=1).mean()) if preds.shape[0] > 1 else 0.0
        return preds.mean(axis=0), sd

    def score(self, model, scenario) -> CellResult:
        cell = CellResult(self.seed, model, scenario, n_excluded=int((~self.keep).sum()))
        fam = model.split("_")[0]
        if fam in self.fit_errors:
            cell.error = self.fit_errors[fam]
            return cell
        try:
            query = simulate_missingness(self.test, scenario, self.seed, self.harness.rates,
                                         self.harness.missing_mode)
            pred, spread = self.predict(model, query)
            cell.mape = mape(self.truth[self.keep], pred[self.keep])
            cell.n_scored = int(self.keep.sum())
            cell.mean_stderr = spread
        except Exception as exc:
            cell.error = f"{type(exc).__name__}: {exc}"
        return cell


def _run_seed(args):
    synth, harness, seed, models, scenarios = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        run = _SeedRun(synth, harness, seed, models)
        return [run.score(m, s) for m in models for s in scenarios]


def run_scenarios(synth_cfg: ScmConfig, models=DEFAULT_MODELS, scenarios=SCENARIOS, seeds=(0, 1, 2, 3, 4),
                  harness: HarnessConfig | None = None, jobs=1) -> ScenarioReport:
    """Evaluate every (model, scenario) cell over ``seeds``.

    Seeds run as independent jobs (processes when ``jobs > 1``); results are
    identical for any ``jobs``.  A failing stage marks its cells with the error
    instead of aborting the run.
    """
    models, scenarios, seeds = tuple(models), tuple(scenarios), tuple(int(s) for s in seeds)
    if not (models and scenarios and seeds):
        raise DomainError("models, scenarios and seeds must all be nonempty")
    unknown = [m for m in models if m not in MODELS]
    if unknown:
        raise DomainError(f"unknown models {unknown}; choose from {list(MODELS)}")
    harness = harness or HarnessConfig()
    bad = [s for s in scenarios if s not in harness.rates]
    if bad:
        raise DomainError(f"unknown scenarios {bad}")
    tasks = [(synth_cfg, harness, s, models, scenarios) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            per_seed = list(pool.map(_run_seed, tasks))
    else:
        per_seed = [_run_seed(t) for t in tasks]
    cells = [c for chunk in per_seed for c in chunk]
    provenance = {"synth_config": synth_cfg.to_json(), "harness": harness.to_json(),
                  "models": list(models), "scenarios": list(scenarios), "seeds": list(seeds)}
    return ScenarioReport(models, scenarios, seeds, cells, provenance)


def write_report(report: ScenarioReport, directory):
    """Write ``report.csv``, ``per_seed.csv``, ``report.json`` and ``table.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (d / "per_seed.csv").write_text(report.per_seed_csv(), encoding="utf-8")
    (d / "table.txt").write_text(report.to_table(), encoding="utf-8")
    summary = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
               for row in report.summary()]
    body = {"provenance": report.provenance, "summary": summary}
    (d / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
