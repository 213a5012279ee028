"""Command-line workflow: simulate, fit, predict, score.

Configuration is one JSON file with strict unknown-key rejection; every
error message names the config key or file at fault.  Exit codes: 0 ok,
2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import pickle
import sys
import time

import numpy as np

from . import io as gio
from .basis import BasisError
from .covpar import CovparError
from .diagnostics import (
    ScoreError,
    brier,
    coverage,
    crps_empirical,
    interval_score,
    mae,
    mape,
    rmspe,
)
from .estimate import FitOptions, fit
from .family import Family, FamilyError, Link
from .geometry import GeometryError, build_bau_grid, map_supports
from .laplace import InnerConvergenceError, LaplaceNumericalError
from .linalg import NotPositiveDefiniteError
from .model import ModelSpec, ObservationSet, SpecError, build_structures
from .predict import predict_baus, predict_regions
from .simulate import SCENARIOS, simulate_scenario

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config schema

def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


_SCHEMA = {
    "seed": _is_number,
    "paths": {
        "data": str,
        "truth": str,
        "output_dir": str,
        "fit_state": str,
        "predictions": str,
        "scores": str,
        "regions": str,
    },
    "grid": {
        "bbox": list,
        "nx": _is_number,
        "ny": _is_number,
        "time_bins": _is_number,
    },
    "model": {
        "family": str,
        "link": str,
        "prior": str,
        "n_res": _is_number,
        "taper_multiplier": _is_number,
        "fs_by_spatial_BAU": bool,
        "known_sigma2fs": _is_number,
        "aggregation": str,
        "r_t": _is_number,
        "temporal_kind": str,
    },
    "fit": {"max_iter": _is_number},
    "predict": {
        "n_MC": _is_number,
        "percentiles": list,
        "targets": list,
        "save_samples": bool,
        "plots": bool,
    },
    "simulate": {
        "scenario": str,
        "m": _is_number,
        "nx": _is_number,
        "ny": _is_number,
        "k_cell": _is_number,
        "coarse": _is_number,
        "psi": _is_number,
        "ns_side": _is_number,
        "n_time": _is_number,
        "r_t": _is_number,
        "holdout_time": _is_number,
    },
}


def _validate(node, schema, path):
    if not isinstance(node, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    for key, val in node.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        rule = schema[key]
        if isinstance(rule, dict):
            _validate(val, rule, where)
        elif rule is str:
            if not isinstance(val, str):
                raise ConfigError(f"{where}: expected a string")
        elif rule is list:
            if not isinstance(val, list):
                raise ConfigError(f"{where}: expected a list")
        elif rule is bool:
            if not isinstance(val, bool):
                raise ConfigError(f"{where}: expected true/false")
        elif callable(rule):
            if val is not None and not rule(val):
                raise ConfigError(f"{where}: expected a number")


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    _validate(cfg, _SCHEMA, "")
    return cfg


_FAMILY_ALIASES = {
    "gaussian": "gaussian",
    "poisson": "poisson",
    "gamma": "gamma",
    "inverse-gaussian": "inverse_gaussian",
    "inverse_gaussian": "inverse_gaussian",
    "negative-binomial": "negative_binomial",
    "negative_binomial": "negative_binomial",
    "binomial": "binomial",
}
_LINK_ALIASES = {
    "identity": "identity",
    "inverse": "inverse",
    "log": "log",
    "square-root": "sqrt",
    "square_root": "sqrt",
    "sqrt": "sqrt",
    "logit": "logit",
    "probit": "probit",
    "cloglog": "cloglog",
}


def _model_spec(cfg: dict) -> ModelSpec:
    m = cfg.get("model", {})
    fam_raw = m.get("family", "gaussian").strip().lower()
    link_raw = m.get("link", "identity").strip().lower()
    if fam_raw not in _FAMILY_ALIASES:
        raise ConfigError(f"model.family: unknown family {fam_raw!r}")
    if link_raw not in _LINK_ALIASES:
        raise ConfigError(f"model.link: unknown link {link_raw!r}")
    agg = m.get("aggregation", "average")
    if agg not in ("average", "sum"):
        raise ConfigError("model.aggregation: expected 'average' or 'sum'")
    prior = m.get("prior", "Q_leroux")
    try:
        return ModelSpec(
            family=Family(_FAMILY_ALIASES[fam_raw]),
            link=Link(_LINK_ALIASES[link_raw]),
            prior_variant=prior,
            n_res=int(m.get("n_res", 2)),
            taper_multiplier=float(m.get("taper_multiplier", 3.0)),
            normalise_wts=(agg == "average"),
            fs_by_spatial_BAU=bool(m.get("fs_by_spatial_BAU", False)),
            known_sigma2fs=(None if m.get("known_sigma2fs") is None
                            else float(m["known_sigma2fs"])),
            r_t=(None if m.get("r_t") is None else int(m["r_t"])),
            temporal_kind=m.get("temporal_kind", "bisquare"),
        )
    except SpecError as exc:
        raise ConfigError(f"model: {exc}")
    except (CovparError, FamilyError) as exc:
        raise ConfigError(f"model: {exc}")


def _grid_from_config(cfg: dict):
    g = cfg.get("grid")
    if g is None:
        raise ConfigError("grid: section required")
    for key in ("bbox", "nx", "ny"):
        if key not in g:
            raise ConfigError(f"grid.{key}: required")
    bbox = g["bbox"]
    if len(bbox) != 4 or not all(_is_number(v) for v in bbox):
        raise ConfigError("grid.bbox: expected [xmin, ymin, xmax, ymax]")
    try:
        return build_bau_grid(tuple(float(v) for v in bbox), int(g["nx"]),
                              int(g["ny"]), int(g.get("time_bins", 1)))
    except GeometryError as exc:
        raise ConfigError(f"grid: {exc}")


def _paths(cfg: dict) -> dict:
    p = dict(cfg.get("paths", {}))
    out = p.get("output_dir", ".")
    os.makedirs(out, exist_ok=True)
    defaults = {
        "data": os.path.join(out, "data.csv"),
        "truth": os.path.join(out, "truth.csv"),
        "fit_state": os.path.join(out, "fit_state.pkl"),
        "predictions": os.path.join(out, "predictions.csv"),
        "scores": os.path.join(out, "scores.csv"),
    }
    for key, val in defaults.items():
        p.setdefault(key, val)
    p["output_dir"] = out
    return p


def _require_seed(cfg: dict) -> int:
    if "seed" not in cfg or cfg["seed"] is None:
        raise ConfigError("seed: required for this command")
    return int(cfg["seed"])


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: dict) -> int:
    seed = _require_seed(cfg)
    sim_cfg = dict(cfg.get("simulate", {}))
    scenario = sim_cfg.pop("scenario", None)
    if scenario is None:
        raise ConfigError("simulate.scenario: required")
    if scenario not in SCENARIOS:
        raise ConfigError(
            f"simulate.scenario: unknown scenario {scenario!r}; "
            f"choose from {sorted(SCENARIOS)}"
        )
    kwargs = {k: (float(v) if k in ("psi", "k_cell") else int(v))
              for k, v in sim_cfg.items()}
    data = simulate_scenario(scenario, seed, **kwargs)
    paths = _paths(cfg)
    k_obs = data.k_Z if data.k_Z is not None else None
    gio.write_data_csv(paths["data"], data.geoms, z=data.z, k=k_obs)
    k_bau = data.grid.size_params
    gio.write_truth_csv(paths["truth"], data.truth_mu, pi=data.truth_pi,
                        k=k_bau, observed=data.observed_mask)
    print(f"simulate: wrote {len(data.geoms)} data rows to {paths['data']} "
          f"and {data.grid.n_total} truth rows to {paths['truth']}")
    return EXIT_OK


def _load_observations(cfg, grid, spec):
    paths = _paths(cfg)
    if not os.path.exists(paths["data"]):
        raise ConfigError(f"paths.data: file {paths['data']} not found")
    geoms, z, k = gio.read_data_csv(paths["data"])
    if z is None:
        raise ConfigError(f"paths.data: {paths['data']} has no z column")
    supports = map_supports(grid, geoms)
    if spec.family.has_size and grid.size_params is None:
        truth_path = paths.get("truth")
        k_bau = None
        if truth_path and os.path.exists(truth_path):
            truth = gio.read_truth_csv(truth_path)
            k_bau = truth.get("k")
        if k_bau is not None:
            grid = grid.with_fields(size_params=k_bau)
        elif k is None:
            raise ConfigError(
                "model.family: size families need a k column in the data CSV "
                "or cell-level k in the truth CSV"
            )
    return grid, ObservationSet(z=z, supports=supports, k_Z=k)


def cmd_fit(cfg: dict) -> int:
    spec = _model_spec(cfg)
    grid = _grid_from_config(cfg)
    grid, obs = _load_observations(cfg, grid, spec)
    structures = build_structures(grid, obs, spec)
    options = FitOptions(max_iter=int(cfg.get("fit", {}).get("max_iter", 100)))
    result = fit(spec, obs, structures, options)
    paths = _paths(cfg)
    with open(paths["fit_state"], "wb") as fh:
        pickle.dump({"version": 1, "fit": result, "config_model": cfg.get("model", {})},
                    fh)
    report_path = os.path.join(paths["output_dir"], "fit_report.txt")
    lines = [f"{k}: {v}" for k, v in result.report.items()]
    gio.atomic_write_text(report_path, "\n".join(lines) + "\n")
    print(f"fit: converged={result.converged} loglik={result.laplace.loglik:.6f} "
          f"iters={result.n_iter} evals={result.n_evals}; "
          f"state -> {paths['fit_state']}, report -> {report_path}")
    return EXIT_OK


def _load_fit(cfg):
    paths = _paths(cfg)
    if not os.path.exists(paths["fit_state"]):
        raise ConfigError(f"paths.fit_state: file {paths['fit_state']} not found")
    with open(paths["fit_state"], "rb") as fh:
        blob = pickle.load(fh)
    if blob.get("version") != 1:
        raise ConfigError(f"paths.fit_state: unsupported state version")
    return blob["fit"]


def cmd_predict(cfg: dict) -> int:
    seed = _require_seed(cfg)
    result = _load_fit(cfg)
    pred_cfg = cfg.get("predict", {})
    n_mc = int(pred_cfg.get("n_MC", 400))
    percentiles = tuple(float(p) for p in pred_cfg.get("percentiles", [5, 95]))
    targets = tuple(pred_cfg.get("targets", ["Y", "mu", "pi", "Z"]))
    known = {"Y", "mu", "pi", "Z"}
    for t in targets:
        if t not in known:
            raise ConfigError(f"predict.targets: unknown target {t!r}")
    save_samples = bool(pred_cfg.get("save_samples", False))
    rng = np.random.default_rng([seed, 1])
    paths = _paths(cfg)

    region_path = paths.get("regions")
    if region_path:
        if not os.path.exists(region_path):
            raise ConfigError(f"paths.regions: file {region_path} not found")
        geoms, _, _ = gio.read_data_csv(region_path)
        try:
            region_supports = map_supports(result.structures.grid, geoms,
                                           kind="prediction")
        except GeometryError as exc:
            raise GeometryError(f"paths.regions: {exc}")
        pred = predict_regions(result, region_supports, n_mc=n_mc,
                               percentiles=percentiles, rng=rng,
                               keep_samples=save_samples,
                               targets=tuple(t for t in targets if t != "Y"))
        ids = np.arange(len(region_supports))
    else:
        pred = predict_baus(result, n_mc=n_mc, percentiles=percentiles,
                            rng=rng, keep_samples=save_samples, targets=targets)
        ids = np.arange(result.structures.grid.n_total)

    header = ["id", "target", "mean", "sd"] + [f"p{gio.fmt(p)}" for p in percentiles]
    rows = []
    for name in ("Y", "mu", "pi", "Z"):
        if name not in pred.summaries:
            continue
        s = pred.summaries[name]
        for i, ident in enumerate(ids):
            rows.append([ident, name, s.mean[i], s.sd[i]]
                        + [s.percentiles[i, j] for j in range(len(percentiles))])
    gio.write_csv(paths["predictions"], header, rows)
    if save_samples:
        for name, mat in pred.samples.items():
            gio.write_sample_dump(
                os.path.join(paths["output_dir"], f"samples_{name}.bin"), mat
            )
    if bool(pred_cfg.get("plots", False)) and not region_path:
        _write_plots(result, pred, paths["output_dir"])
    print(f"predict: wrote {len(rows)} rows to {paths['predictions']}")
    return EXIT_OK


def _write_plots(result, pred, out_dir: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = result.structures.grid
    nx, ny = grid.nx, grid.ny
    for name, s in pred.summaries.items():
        mean = s.mean[: grid.n_spatial].reshape(ny, nx)
        if s.percentiles.shape[1] >= 2:
            width = (s.percentiles[: grid.n_spatial, -1]
                     - s.percentiles[: grid.n_spatial, 0]).reshape(ny, nx)
        else:
            width = s.sd[: grid.n_spatial].reshape(ny, nx)
        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        for ax, img, title in ((axes[0], mean, f"{name}: prediction"),
                               (axes[1], width, f"{name}: interval width")):
            im = ax.imshow(img, origin="lower", cmap="viridis",
                           extent=grid.bbox[:: 2] + grid.bbox[1:: 2])
            ax.set_title(title)
            fig.colorbar(im, ax=ax, shrink=0.85)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, f"predict_{name}.png"), dpi=120)
        plt.close(fig)


def cmd_score(cfg: dict) -> int:
    t0 = time.perf_counter()
    paths = _paths(cfg)
    for key in ("predictions", "truth"):
        if not os.path.exists(paths[key]):
            raise ConfigError(f"paths.{key}: file {paths[key]} not found")
    header, rows = gio.read_csv_dict(paths["predictions"])
    need = {"id", "target", "mean", "sd"}
    if not need.issubset(header):
        raise ConfigError(
            f"paths.predictions: columns {sorted(need)} required, got {header}"
        )
    truth = gio.read_truth_csv(paths["truth"])
    truth_by_id = {int(i): j for j, i in enumerate(truth["bau_id"])}

    mu_rows = [r for r in rows if r["target"] == "mu"]
    if not mu_rows:
        raise ConfigError("paths.predictions: no rows with target 'mu'")
    ids, means, lows, highs = [], [], [], []
    has_interval = "p5" in header and "p95" in header
    for r in mu_rows:
        i = int(float(r["id"]))
        if i not in truth_by_id:
            continue
        ids.append(i)
        means.append(float(r["mean"]))
        if has_interval:
            lows.append(float(r["p5"]))
            highs.append(float(r["p95"]))
    if not ids:
        raise ConfigError("paths.predictions: no prediction ids match the truth ids")
    order = np.array([truth_by_id[i] for i in ids])
    mu_true = truth["mu"][order]
    means = np.asarray(means)

    scores = {
        "rmspe": rmspe(mu_true, means),
        "mae": mae(mu_true, means),
    }
    try:
        scores["mape"] = mape(mu_true, means)
    except ScoreError:
        scores["mape"] = ""
    samples_path = os.path.join(paths["output_dir"], "samples_mu.bin")
    if os.path.exists(samples_path):
        samp = gio.read_sample_dump(samples_path)
        row_map = {int(float(r["id"])): j for j, r in enumerate(mu_rows)}
        scores["crps"] = crps_empirical(mu_true,
                                        samp[[row_map[i] for i in ids]])
    else:
        scores["crps"] = ""
    if has_interval:
        lows = np.asarray(lows)
        highs = np.asarray(highs)
        scores["is90"] = interval_score(mu_true, lows, highs, alpha=0.1)
        scores["cvg90"] = coverage(mu_true, lows, highs)
    else:
        scores["is90"] = ""
        scores["cvg90"] = ""
    z_col = truth.get("z_binary")
    pi_rows = {int(float(r["id"])): float(r["mean"])
               for r in rows if r["target"] == "pi"}
    if z_col is not None and pi_rows:
        zb = truth["z_binary"][order]
        pv = np.array([pi_rows.get(i, np.nan) for i in ids])
        if np.all(np.isfinite(pv)):
            scores["brier"] = brier(zb, pv)
    wall = time.perf_counter() - t0
    head = list(scores.keys())
    gio.write_csv(paths["scores"], head, [[scores[k] for k in head]])
    print(f"score: {paths['scores']} "
          + " ".join(f"{k}={scores[k] if scores[k] != '' else 'n/a'}"
                     for k in head)
          + f" wall_time_s={wall:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="glmkrig",
        description="Low-rank spatial prediction for exponential-family data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("simulate", cmd_simulate), ("fit", cmd_fit),
                     ("predict", cmd_predict), ("score", cmd_score)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.set_defaults(func=fn)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpecError, FamilyError, CovparError, BasisError, GeometryError,
            gio.IOFormatError, ScoreError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InnerConvergenceError, LaplaceNumericalError,
            NotPositiveDefiniteError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
