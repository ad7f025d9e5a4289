"""Command-line front end orchestrating the pipeline end to end.

Subcommands: simulate, build-schemes, fit, predict, validate, score.
Everything that affects results lives in a JSON config; flags only select
paths, verbosity, and parallelism.  Outputs land in a run directory with a
manifest recording the config hash and seed; partial outputs are removed on
error.  Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .grid import Raster, TransformSpec, build_fine_grid, load_ascii_grid, write_ascii_grid
from .inference import (
    McmcConfig,
    PosteriorSamples,
    aggregate,
    fit,
    predict_risk,
    predictive_cluster_draws,
    read_samples_csv,
    write_samples_csv,
)
from .integration import build_geomask_scheme, scheme_to_json
from .model import (
    APPROACHES,
    ClusterRecord,
    attach_schemes,
    read_clusters_csv,
    write_clusters_csv,
)
from .priors import PriorSet, default_priors, scaled_structured_precision
from .scoring import (
    PredictiveSample,
    aggregate_scores,
    crps,
    diff_distribution,
    direct_estimate,
    fuzzy_coverage,
    fuzzy_width,
    interval_score,
    make_folds,
    mse,
    precision_weighted_combine,
)
from .simulate import SimulationConfig, simulate_survey, simulate_world, true_areal_prevalence

_APPROACH_ID = {name: i for i, name in enumerate(APPROACHES)}
_SURVEY_ID = {"jittered": 0, "geomasked": 1}

DEFAULT_COVARIATES = [
    {"file": "urbanicity.asc", "transform": "identity", "normalize": False},
    {"file": "access.asc", "transform": "log1p", "normalize": True},
    {"file": "elevation.asc", "transform": "sqrt", "normalize": True},
    {"file": "distance.asc", "transform": "identity", "normalize": True},
    {"file": "population.asc", "transform": "log1p", "normalize": True},
]

CLUSTER_METRICS = ["mse", "crps", "interval_score", "coverage", "width"]


def _load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg["_config_dir"] = str(path.parent)
    cfg["_config_sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    return cfg


def _resolve(cfg: dict, rel) -> Path:
    p = Path(rel)
    if p.is_absolute():
        return p
    data_dir = cfg.get("paths", {}).get("data_dir")
    base = Path(cfg["_config_dir"])
    if data_dir is not None:
        base = base / data_dir if not Path(data_dir).is_absolute() else Path(data_dir)
    return base / p


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing required key '{key}'")
    return cfg[key]


def _load_grid(cfg: dict):
    gspec = cfg.get("grid", {})
    cov_spec = gspec.get("covariates", DEFAULT_COVARIATES)

    def raster(key, default_name):
        p = _resolve(cfg, gspec.get(key, default_name))
        if not p.exists():
            raise ConfigError(f"raster file not found: {p}")
        return load_ascii_grid(p)

    population = raster("population", "population.asc")
    urbanicity = raster("urbanicity", "urbanicity.asc")
    regions = raster("regions", "regions.asc")
    admin2 = raster("admin2", "admin2.asc")
    covs = []
    for c in cov_spec:
        p = _resolve(cfg, c["file"])
        if not p.exists():
            raise ConfigError(f"covariate raster not found: {p}")
        covs.append(load_ascii_grid(p))
    transforms = TransformSpec(
        transforms=[c["transform"] for c in cov_spec],
        normalize=[bool(c.get("normalize", True)) for c in cov_spec],
        lambda_mix=float(cfg.get("schemes", {}).get("lambda_mix", 0.0)),
    )
    return build_fine_grid(covs, population, urbanicity, regions, admin2, transforms)


def _load_records(cfg: dict, grid):
    files = cfg.get("paths", {}).get(
        "clusters", ["clusters_jittered.csv", "clusters_geomasked.csv"]
    )
    records = []
    for f in files:
        p = _resolve(cfg, f)
        if not p.exists():
            raise ConfigError(f"cluster file not found: {p}")
        records.extend(read_clusters_csv(p, grid))
    if not records:
        raise DataError("no cluster records found")
    return records


def _load_priors(cfg: dict, grid) -> PriorSet:
    adj_path = _resolve(cfg, cfg.get("paths", {}).get("adjacency", "adjacency.json"))
    if not adj_path.exists():
        raise ConfigError(f"adjacency file not found: {adj_path}")
    with open(adj_path, encoding="utf-8") as fh:
        adjacency = json.load(fh)
    structured = scaled_structured_precision(adjacency)
    pr = cfg.get("priors", {})
    return default_priors(
        structured,
        u_tau=float(pr.get("u_tau", 1.0)),
        alpha_tau=float(pr.get("alpha_tau", 0.1)),
        u_sigma_eps=float(pr.get("u_sigma_eps", 1.0)),
        alpha_sigma_eps=float(pr.get("alpha_sigma_eps", 0.1)),
        phi_target=float(pr.get("phi_target", 0.5)),
        phi_prob=float(pr.get("phi_prob", 2.0 / 3.0)),
        beta_variance=pr.get("beta_variance"),
    )


def _mcmc_config(cfg: dict, seed) -> McmcConfig:
    m = cfg.get("mcmc", {})
    return McmcConfig(
        n_iterations=int(m.get("n_iterations", 3000)),
        n_burnin=int(m.get("n_burnin", 1000)),
        thin=int(m.get("thin", 1)),
        seed=seed,
        adapt_window=int(m.get("adapt_window", 50)),
        gh_order=int(cfg.get("gh_order", 25)),
    )


def _scheme_kwargs(cfg: dict) -> dict:
    anon = cfg.get("anonymization", {})
    schemes = cfg.get("schemes", {})
    return {
        "k_geomask": int(schemes.get("k_geomask", 100)),
        "points_per_ring": int(schemes.get("points_per_ring", 5)),
        "ring_radii_urban": schemes.get("ring_radii_urban"),
        "ring_radii_rural": schemes.get("ring_radii_rural"),
        "r_max": float(anon.get("urban_radius_km", 2.0)),
        "r_near": float(anon.get("rural_radius_near_km", 5.0)),
        "r_far": float(anon.get("rural_radius_far_km", 10.0)),
        "p_far": float(anon.get("rural_far_prob", 0.01)),
    }


class _Run:
    """Tracks created outputs so failures leave no partial files behind."""

    def __init__(self, run_dir: Path):
        self.dir = run_dir
        self.created = []
        run_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.created.append(p)
        return p

    def cleanup(self):
        for p in self.created:
            try:
                if p.exists():
                    p.unlink()
            except OSError:
                pass

    def manifest(self, command: str, cfg: dict):
        doc = {
            "command": command,
            "config_sha256": cfg.get("_config_sha256", ""),
            "seed": cfg.get("seed", 0),
            "outputs": sorted(str(p.relative_to(self.dir)) for p in self.created),
        }
        with open(self.path("manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                "%.10g" % x if isinstance(x, float) else str(x) for x in row
            ) + "\n")


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: dict, run: _Run) -> None:
    seed = int(cfg.get("seed", 0))
    world_cfg = dict(cfg.get("world", {}))
    known = set(SimulationConfig.__dataclass_fields__)
    unknown = set(world_cfg) - known
    if unknown:
        raise ConfigError(f"unknown world config keys: {sorted(unknown)}")
    sim_cfg = SimulationConfig(**world_cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    world = simulate_world(sim_cfg, rng)

    for name in ("population", "urbanicity", "access", "elevation", "distance",
                 "regions", "admin2"):
        write_ascii_grid(world.rasters[name], run.path(f"{name}.asc"))
    with open(run.path("adjacency.json"), "w", encoding="utf-8") as fh:
        json.dump(world.adjacency, fh)

    grid = world.grid
    risk_vals = np.full(grid.n_rows * grid.n_cols, -9999.0)
    flat = np.flatnonzero(grid.cell_lookup >= 0)
    risk_vals[flat] = world.risk[grid.cell_lookup[flat]]
    risk_raster = Raster(grid.n_rows, grid.n_cols, grid.x_origin, grid.y_origin,
                         grid.cell_size, -9999.0, risk_vals)
    write_ascii_grid(risk_raster, run.path("truth_risk.asc"))

    truth_doc = {
        "beta": list(map(float, world.params.beta)),
        "tau": world.params.tau,
        "phi": world.params.phi,
        "sigma_eps_sq": world.params.sigma_eps_sq,
        "w": list(map(float, world.latent.w)),
        "v": list(map(float, world.latent.v)),
        "areal_prevalence": list(map(float, true_areal_prevalence(world))),
    }
    with open(run.path("truth_params.json"), "w", encoding="utf-8") as fh:
        json.dump(truth_doc, fh, indent=2)

    for i, design in enumerate(("jittered", "geomasked")):
        srng = np.random.default_rng(np.random.SeedSequence([seed, 1 + i]))
        records, truths = simulate_survey(world, design, sim_cfg, srng)
        write_clusters_csv(records, run.path(f"clusters_{design}.csv"))
        _write_csv(
            run.path(f"truth_clusters_{design}.csv"),
            ["cell", "x", "y", "region", "risk", "epsilon"],
            [(t.cell, t.x, t.y, t.region, t.risk, t.epsilon) for t in truths],
        )


# ----------------------------------------------------------- build-schemes


def cmd_build_schemes(cfg: dict, run: _Run) -> None:
    grid = _load_grid(cfg)
    k = int(cfg.get("schemes", {}).get("k_geomask", 100))
    n_written = 0
    for region in range(grid.n_regions):
        for urban in (True, False):
            mask = (grid.region == region) & (grid.urban == urban)
            if not np.any(mask):
                continue
            scheme = build_geomask_scheme(grid, region, urban, k, grid.transforms)
            tag = "urban" if urban else "rural"
            with open(run.path(f"schemes/geomask_region{region}_{tag}.json"), "w",
                      encoding="utf-8") as fh:
                fh.write(scheme_to_json(scheme))
            n_written += 1
    if n_written == 0:
        raise DataError("no (region, urbanicity) pair has populated support")


# --------------------------------------------------------------------- fit


def _prepare_training(cfg: dict, grid, records, approach: str, rng):
    if approach in ("ignore-jitter", "correct-jitter"):
        records = [r for r in records if r.survey == "jittered"]
    return attach_schemes(records, grid, approach=approach, rng=rng,
                          **_scheme_kwargs(cfg))


def cmd_fit(cfg: dict, run: _Run) -> None:
    seed = int(cfg.get("seed", 0))
    approach = cfg.get("approach", "full")
    if approach not in APPROACHES:
        raise ConfigError(f"unknown approach {approach!r}")
    grid = _load_grid(cfg)
    records = _load_records(cfg, grid)
    priors = _load_priors(cfg, grid)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
    training = _prepare_training(cfg, grid, records, approach, rng)
    samples = fit(training, grid, priors,
                  _mcmc_config(cfg, np.random.SeedSequence([seed, 11])))
    write_samples_csv(samples, run.path("samples.csv"))

    def q(a, p):
        return float(np.quantile(a, p))

    summary = {"acceptance": samples.acceptance, "n_draws": samples.n_draws,
               "approach": approach, "parameters": {}}
    names = ([f"beta_{j}" for j in range(samples.beta.shape[1])]
             + ["tau", "phi", "sigma_eps_sq"])
    cols = ([samples.beta[:, j] for j in range(samples.beta.shape[1])]
            + [samples.tau, samples.phi, samples.sigma_eps_sq])
    for name, col in zip(names, cols):
        summary["parameters"][name] = {
            "mean": float(np.mean(col)), "q025": q(col, 0.025), "q975": q(col, 0.975),
        }
    with open(run.path("summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)


# ----------------------------------------------------------------- predict


def cmd_predict(cfg: dict, run: _Run) -> None:
    grid = _load_grid(cfg)
    samples_path = _resolve(cfg, _require(cfg.get("paths", {}), "samples"))
    if not samples_path.exists():
        raise ConfigError(f"samples file not found: {samples_path}")
    samples = read_samples_csv(samples_path)
    n_draws = int(cfg.get("predict", {}).get("n_draws", min(500, samples.n_draws)))
    draws = predict_risk(samples, grid, n_draws)

    mean = draws.mean(axis=0)
    lo = np.quantile(draws, 0.025, axis=0)
    hi = np.quantile(draws, 0.975, axis=0)

    def as_raster(cell_vals):
        vals = np.full(grid.n_rows * grid.n_cols, -9999.0)
        flat = np.flatnonzero(grid.cell_lookup >= 0)
        vals[flat] = cell_vals[grid.cell_lookup[flat]]
        return Raster(grid.n_rows, grid.n_cols, grid.x_origin, grid.y_origin,
                      grid.cell_size, -9999.0, vals)

    write_ascii_grid(as_raster(mean), run.path("risk_mean.asc"))
    write_ascii_grid(as_raster(hi - lo), run.path("risk_ci_width.asc"))

    for level in ("region", "admin2"):
        areal = aggregate(draws, grid, level)
        rows = []
        for a in range(areal.shape[1]):
            col = areal[:, a]
            if np.any(np.isnan(col)):
                rows.append((a, "", "", ""))
            else:
                rows.append((a, float(col.mean()), float(np.quantile(col, 0.025)),
                             float(np.quantile(col, 0.975))))
        _write_csv(run.path(f"areal_{level}.csv"),
                   ["area", "mean", "q025", "q975"], rows)


# ---------------------------------------------------------------- validate


def _score_cluster_prediction(y_rate: float, draws: np.ndarray, alpha: float) -> dict:
    pred = PredictiveSample(np.clip(draws, 0.0, 1.0))
    return {
        "mse": mse(y_rate, pred),
        "crps": crps(y_rate, pred),
        "interval_score": interval_score(y_rate, pred, alpha),
        "coverage": fuzzy_coverage(y_rate, pred, alpha),
        "width": fuzzy_width(pred, alpha),
    }


def _cluster_task(payload):
    (grid, priors, training, test_records, mcfg, n_pred, alpha, pred_seed) = payload
    samples = fit(training, grid, priors, mcfg)
    out = []
    for j, rec in enumerate(test_records):
        prng = np.random.default_rng(np.random.SeedSequence(pred_seed + [j]))
        draws = predictive_cluster_draws(samples, rec, grid, prng, n_pred)
        scores = _score_cluster_prediction(rec.y / rec.n, draws, alpha)
        scores["n"] = rec.n
        scores["survey"] = rec.survey
        out.append(scores)
    return out


def _areal_task(payload):
    (grid, priors, training, held, area, mcfg, n_pred, diff_draws, alpha,
     diff_seed) = payload
    samples = fit(training, grid, priors, mcfg)
    draws = predict_risk(samples, grid, min(n_pred, samples.n_draws))
    areal = aggregate(draws, grid, "region", n_areas=priors.structured.n_regions)
    model_draws = areal[:, area]
    held_j = [r for r in held if r.survey == "jittered"]
    held_g = [r for r in held if r.survey == "geomasked"]
    directs = {}
    if len(held_j) >= 2:
        directs["jittered"] = direct_estimate(held_j)
    if len(held_g) >= 2:
        directs["geomasked"] = direct_estimate(held_g)
    if "jittered" in directs and "geomasked" in directs:
        directs["combined"] = precision_weighted_combine(
            directs["jittered"], directs["geomasked"]
        )
    out = {}
    for d_id, (name, est) in enumerate(sorted(directs.items())):
        if not math.isfinite(est[1]):
            continue
        rng = np.random.default_rng(np.random.SeedSequence(diff_seed + [d_id]))
        diff = diff_distribution(model_draws, est, rng, diff_draws)
        out[name] = {
            "mse": mse(0.0, diff),
            "crps": crps(0.0, diff),
            "interval_score": interval_score(0.0, diff, alpha),
            "coverage": fuzzy_coverage(0.0, diff, alpha),
            "width": fuzzy_width(diff, alpha),
        }
    return out


def _run_tasks(worker, payloads, threads: int):
    if threads <= 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, payloads))


def cmd_validate(cfg: dict, run: _Run, threads: int = 1) -> None:
    seed = int(cfg.get("seed", 0))
    vcfg = cfg.get("validate", {})
    approaches = vcfg.get("approaches", list(APPROACHES))
    for a in approaches:
        if a not in APPROACHES:
            raise ConfigError(f"unknown approach {a!r}")
    n_folds = int(vcfg.get("n_folds", 10))
    areal_folds = int(vcfg.get("areal_folds_per_survey", 5))
    n_pred = int(vcfg.get("prediction_draws", 400))
    diff_draws = int(vcfg.get("diff_draws", 1000))
    alpha = float(vcfg.get("alpha", 0.05))

    grid = _load_grid(cfg)
    records = _load_records(cfg, grid)
    priors = _load_priors(cfg, grid)

    fold_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    plan = make_folds(records, fold_rng, n_folds)
    pick_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    areal_fold_set = {
        survey: set(pick_rng.choice(np.arange(1, n_folds + 1),
                                    size=min(areal_folds, n_folds), replace=False))
        for survey in ("jittered", "geomasked")
    }

    surveys_present = sorted({r.survey for r in records})
    cluster_rows = []
    areal_rows = []
    for approach in approaches:
        aid = _APPROACH_ID[approach]
        att_rng = np.random.default_rng(np.random.SeedSequence([seed, 3, aid]))
        attached = attach_schemes(records, grid, approach=approach, rng=att_rng,
                                  **_scheme_kwargs(cfg))
        dhs_only = approach in ("ignore-jitter", "correct-jitter")
        train_pool = [i for i, r in enumerate(records)
                      if not (dhs_only and r.survey == "geomasked")]

        payloads = []
        for survey in surveys_present:
            sid = _SURVEY_ID[survey]
            if dhs_only and survey == "geomasked":
                # one shared fit on all training data predicts every held-out
                # geomasked fold, mirroring the 11-fit protocol
                train = [attached[i] for i in train_pool]
                test = [attached[i] for i, r in enumerate(records)
                        if r.survey == "geomasked"]
                if test:
                    payloads.append((grid, priors, train, test,
                                     _mcmc_config(cfg, np.random.SeedSequence(
                                         [seed, 4, aid, sid, 0])),
                                     n_pred, alpha, [seed, 5, aid, sid, 0]))
                continue
            for f in range(1, n_folds + 1):
                test_idx = plan.indices(records, survey, f)
                if test_idx.size == 0:
                    continue
                train = [attached[i] for i in train_pool
                         if not (records[i].survey == survey and plan.fold[i] == f)]
                test = [attached[i] for i in test_idx]
                payloads.append((grid, priors, train, test,
                                 _mcmc_config(cfg, np.random.SeedSequence(
                                     [seed, 4, aid, sid, f])),
                                 n_pred, alpha, [seed, 5, aid, sid, f]))
        results = _run_tasks(_cluster_task, payloads, threads)

        per_survey = {s: {"scores": [], "weights": []} for s in surveys_present}
        for result in results:
            for scores in result:
                s = scores["survey"]
                per_survey[s]["scores"].append(scores)
                per_survey[s]["weights"].append(scores["n"])
        survey_totals = {s: float(np.sum(per_survey[s]["weights"]))
                         for s in surveys_present}
        survey_metrics = {}
        for s in surveys_present:
            entry = per_survey[s]
            if not entry["scores"]:
                continue
            survey_metrics[s] = {
                m: aggregate_scores([sc[m] for sc in entry["scores"]], entry["weights"])
                for m in CLUSTER_METRICS
            }
        if len(survey_metrics) == 2:
            tot = sum(survey_totals.values())
            survey_metrics["combined"] = {
                m: sum(survey_totals[s] / tot * survey_metrics[s][m]
                       for s in surveys_present)
                for m in CLUSTER_METRICS
            }
        for dataset in ("combined", "jittered", "geomasked"):
            if dataset in survey_metrics:
                met = survey_metrics[dataset]
                cluster_rows.append([approach, dataset]
                                    + [met[m] for m in CLUSTER_METRICS])

        # areal validation: refit once per left-out area
        payloads = []
        for area in range(priors.structured.n_regions):
            held_idx = [i for i, r in enumerate(records)
                        if r.region == area and plan.fold[i] in areal_fold_set[r.survey]]
            if not held_idx:
                continue
            held_set = set(held_idx)
            train = [attached[i] for i in train_pool if i not in held_set]
            held = [records[i] for i in held_idx]
            payloads.append((grid, priors, train, held, area,
                             _mcmc_config(cfg, np.random.SeedSequence(
                                 [seed, 6, aid, area])),
                             n_pred, diff_draws, alpha, [seed, 7, aid, area]))
        results = _run_tasks(_areal_task, payloads, threads)

        collected: dict = {}
        for result in results:
            for dataset, met in result.items():
                collected.setdefault(dataset, []).append(met)
        for dataset in ("combined", "jittered", "geomasked"):
            if dataset not in collected:
                continue
            entries = collected[dataset]
            areal_rows.append(
                [approach, dataset]
                + [float(np.mean([e[m] for e in entries])) for m in CLUSTER_METRICS]
            )

    header = ["approach", "dataset"] + CLUSTER_METRICS
    _write_csv(run.path("scores_cluster.csv"), header, cluster_rows)
    _write_csv(run.path("scores_areal.csv"), header, areal_rows)


# ------------------------------------------------------------------- score


def cmd_score(cfg: dict, run: _Run) -> None:
    scfg = cfg.get("score", {})
    pred_path = _resolve(cfg, _require(scfg, "predictions"))
    target_path = _resolve(cfg, _require(scfg, "targets"))
    alpha = float(scfg.get("alpha", 0.05))
    for p in (pred_path, target_path):
        if not p.exists():
            raise ConfigError(f"input file not found: {p}")

    draws: dict = {}
    with open(pred_path, encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["unit", "value"]:
            raise DataError(f"{pred_path}: expected header unit,value")
        for line in fh:
            if not line.strip():
                continue
            unit, value = line.strip().split(",")[:2]
            draws.setdefault(unit, []).append(float(value))

    rows = []
    scores, weights = [], []
    with open(target_path, encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["unit", "y"]:
            raise DataError(f"{target_path}: expected header unit,y[,weight]")
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            unit, y = parts[0], float(parts[1])
            weight = float(parts[2]) if len(parts) > 2 else 1.0
            if unit not in draws:
                raise DataError(f"no predictive draws for unit {unit!r}")
            pred = PredictiveSample(draws[unit], validate_range=False)
            met = {
                "mse": mse(y, pred),
                "crps": crps(y, pred),
                "interval_score": interval_score(y, pred, alpha),
                "coverage": fuzzy_coverage(y, pred, alpha),
                "width": fuzzy_width(pred, alpha),
            }
            rows.append([unit, weight] + [met[m] for m in CLUSTER_METRICS])
            scores.append(met)
            weights.append(weight)
    agg = ["__aggregate__", float(np.sum(weights))] + [
        aggregate_scores([s[m] for s in scores], weights) for m in CLUSTER_METRICS
    ]
    _write_csv(run.path("metrics.csv"),
               ["unit", "weight"] + CLUSTER_METRICS, rows + [agg])


# -------------------------------------------------------------------- main


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="anonprev",
        description="Spatial prevalence modeling under jittered or geomasked locations",
    )
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker pool size for validation fold fits")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "build-schemes", "fit", "predict", "validate", "score"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--output-dir", default=None,
                       help="run directory (default: config output_dir)")
    args = parser.parse_args(argv)

    try:
        cfg = _load_config(args.config)
        out = args.output_dir or cfg.get("output_dir")
        if out is None:
            raise ConfigError("no output directory: set output_dir or --output-dir")
        out = Path(out)
        if not out.is_absolute():
            out = Path(cfg["_config_dir"]) / out
        run = _Run(out)
        try:
            if args.command == "simulate":
                cmd_simulate(cfg, run)
            elif args.command == "build-schemes":
                cmd_build_schemes(cfg, run)
            elif args.command == "fit":
                cmd_fit(cfg, run)
            elif args.command == "predict":
                cmd_predict(cfg, run)
            elif args.command == "validate":
                cmd_validate(cfg, run, threads=max(1, args.threads))
            elif args.command == "score":
                cmd_score(cfg, run)
            run.manifest(args.command, cfg)
        except BaseException:
            run.cleanup()
            raise
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    if args.verbose:
        print(f"{args.command}: outputs in {run.dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
