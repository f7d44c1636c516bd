"""Command-line front end.

    ckmap <command> [--config cfg.json] [--seed N] [--out DIR]

Commands: gen-scene, sample, build-ckm, train-mlp, fit-pl, eval-d2d,
eval-beam, export-map. Exit status 0 on success, 1 on usage errors and 2 on
runtime errors (bad input files, failed pipelines).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import mlp as mlp_mod
from .ckm_store import CkmError, build_table_ckm, export_grid, slot_index
from .d2d import (
    D2dConfig, cgm_predictor, draw_problem, mlp_predictor, plfit_predictor, run_d2d_experiment,
)
from .formats import (
    FormatError, grid_to_csv, load_ckm, load_dataset, read_json, save_ckm,
    save_dataset, table_to_csv, write_atomic, write_json,
)
from .mmwave import BeamExperimentConfig, run_beam_experiment
from .plfit import PlModel, fit_dataset
from .propagation import OracleConfig, sample_cgm, sample_cpm
from .scene import Scene, grid_locations, load_scene, preset_scene

log = logging.getLogger("ckmap")

DEFAULT_CONFIG = {
    "seed": 0,
    "scene": "scene.json",
    "scene_gen": {"preset": "d2d"},
    "oracle": {"max_reflections": 1, "reflection_loss_db": 6.0,
               "noise_floor_dbm": -100.0, "tx_power_dbm": 30.0},
    "sampling": {"kind": "cgm", "grid_step": 5.0, "tx_height": 1.5, "rx_height": 1.5,
                 "outdoor_only": True, "region": None},
    "ckm": {"knn_k": 3, "idw_power": 2.0},
    "train": {"learning_rate": 1e-3, "batch_size": 64, "epochs": 200, "optimizer": "adam",
              "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "gain_floor_db": -200.0,
              "test_fraction": 0.2},
    "d2d": {"n_pairs": 30, "pair_distance": [5.0, 20.0], "height": 1.5, "tx_power_dbm": 20.0,
            "noise_dbm": -90.0, "n_seeds": 50, "cgm_backend": "table", "include_gains": False},
    "beam": {"n_y_list": [2, 5, 10, 20], "n_z": 10, "errors": [0.0, 1.0, 5.0],
             "n_locations": 200, "ue_height": 1.5, "ref_gain_db": -90.0, "p_over_n": None,
             "cpm_fallback": "nearest"},
    "export": {"slot": "azimuth1", "resolution": 1.0, "region": None, "tx_xy": None},
    "inputs": {"dataset": None, "ckm": None, "model": None, "plfit": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise UsageError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            out[k] = _merge(base[k], v, where + k + ".")
        else:
            out[k] = v
    return out


class Run:
    """Resolved configuration plus path handling for one command."""

    def __init__(self, config_path, seed, out):
        user = {}
        self.base = Path(".")
        if config_path:
            try:
                user = read_json(config_path)
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
            if not isinstance(user, dict):
                raise UsageError("config must be a JSON object")
            self.base = Path(config_path).parent
        cfg = _merge(DEFAULT_CONFIG, user)
        if seed is not None:
            cfg["seed"] = seed
        if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
            raise UsageError("seed must be a non-negative integer")
        self.cfg = cfg
        self.out = Path(out)

    def path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def input(self, name, required=True):
        p = self.cfg["inputs"].get(name)
        if p is None:
            if required:
                raise UsageError(f"config inputs.{name} is required for this command")
            return None
        p = self.path(p)
        if not p.exists():
            raise UsageError(f"inputs.{name}: file not found: {p}")
        return p

    def scene(self) -> Scene:
        p = self.path(self.cfg["scene"])
        if not p.exists():
            raise UsageError(f"scene file not found: {p}")
        try:
            return load_scene(p)
        except (ValueError, json.JSONDecodeError) as exc:
            raise FormatError(f"{p}: {exc}") from exc

    def oracle(self) -> OracleConfig:
        return OracleConfig(**self.cfg["oracle"])

    def echo(self) -> dict:
        return self.cfg


# ------------------------------------------------------------------ commands

def cmd_gen_scene(run: Run):
    g = dict(run.cfg["scene_gen"])
    name = g.pop("preset", "d2d")
    g.setdefault("seed", run.cfg["seed"])
    scene = preset_scene(name, **g)
    doc = scene.to_dict()
    doc["generator"] = {"preset": name, **g}
    write_json(run.out / "scene.json", doc, run.echo())
    return run.out / "scene.json"


def _sample(run: Run, scene: Scene, kind=None):
    s = run.cfg["sampling"]
    region = s["region"]
    kind = kind or s["kind"]
    if kind == "cgm":
        tx = grid_locations(scene, s["grid_step"], s["tx_height"], s["outdoor_only"], region)
        rx = grid_locations(scene, s["grid_step"], s["rx_height"], s["outdoor_only"], region)
        return sample_cgm(scene, tx, rx, run.oracle())
    if kind == "cpm":
        rx = grid_locations(scene, s["grid_step"], s["rx_height"], s["outdoor_only"], region)
        return sample_cpm(scene, rx, run.oracle())
    raise UsageError(f"sampling.kind must be 'cgm' or 'cpm', got {kind!r}")


def cmd_sample(run: Run):
    ds = _sample(run, run.scene())
    path = run.out / f"dataset_{ds.kind}.csv"
    save_dataset(path, ds, run.echo())
    log.info("wrote %d %s rows to %s", len(ds), ds.kind, path)
    return path


def _dataset(run: Run, kind=None):
    p = run.input("dataset", required=False)
    if p is None:
        return _sample(run, run.scene(), kind)
    ds = load_dataset(p)
    if kind and ds.kind != kind:
        raise FormatError(f"{p}: expected a {kind} dataset, found {ds.kind}")
    return ds


def _ckm(run: Run, kind):
    p = run.input("ckm", required=False)
    if p is not None:
        ckm = load_ckm(p)
        if ckm.kind != kind:
            raise FormatError(f"{p}: expected a {kind} map, found {ckm.kind}")
        return ckm
    c = run.cfg["ckm"]
    return build_table_ckm(_dataset(run, kind), knn_k=c["knn_k"], idw_power=c["idw_power"])


def cmd_build_ckm(run: Run):
    ds = _dataset(run)
    c = run.cfg["ckm"]
    ckm = build_table_ckm(ds, knn_k=c["knn_k"], idw_power=c["idw_power"])
    path = run.out / f"ckm_{ckm.kind}.json"
    save_ckm(path, ckm, run.echo())
    log.info("map with %d entries -> %s", len(ckm), path)
    return path


def _train_cfg(run: Run) -> mlp_mod.TrainConfig:
    t = {k: v for k, v in run.cfg["train"].items() if k != "test_fraction"}
    return mlp_mod.TrainConfig(seed=run.cfg["seed"], **t)


def cmd_train_mlp(run: Run):
    ds = _dataset(run, "cgm")
    tcfg = _train_cfg(run)
    tr, te = mlp_mod.split_train_test(len(ds), run.cfg["train"]["test_fraction"], run.cfg["seed"])
    net = mlp_mod.init(mlp_mod.MlpPlan.layered(ds.values.shape[1], ds.keys.shape[1]), run.cfg["seed"])
    net, hist = mlp_mod.train(net, ds.keys[tr], ds.values[tr], tcfg)
    test_mse = (mlp_mod.mse(net, ds.keys[te], mlp_mod.clamp_targets(ds.values[te], tcfg.gain_floor_db))
                if len(te) else None)
    doc = {"model": mlp_mod.to_dict(net), "loss_history": hist, "test_mse": test_mse,
           "n_train": int(len(tr)), "n_test": int(len(te)), "meta": ds.meta,
           "gain_floor_db": tcfg.gain_floor_db}
    path = run.out / "mlp.json"
    write_json(path, doc, run.echo())
    return path


def cmd_fit_pl(run: Run):
    ds = _dataset(run, "cgm")
    model = fit_dataset(ds)
    path = run.out / "plfit.json"
    write_json(path, {"model": model.to_dict(), "meta": ds.meta}, run.echo())
    log.info("alpha=%.4f beta=%.4f gamma=%.4f rms=%.3f dB", model.alpha, model.beta,
             model.gamma, model.rms)
    return path


def cmd_eval_d2d(run: Run):
    scene = run.scene()
    d = run.cfg["d2d"]
    oracle = run.oracle()
    ds = None
    if run.cfg["inputs"]["ckm"] is None or run.cfg["inputs"]["plfit"] is None:
        ds = _dataset(run, "cgm")
    meta = ds.meta if ds is not None else {}

    if run.cfg["inputs"]["plfit"] is not None:
        pl = PlModel.from_dict(read_json(run.input("plfit"))["model"])
    else:
        pl = fit_dataset(ds)
    if d["cgm_backend"] == "table":
        ckm = (load_ckm(run.input("ckm")) if run.cfg["inputs"]["ckm"] is not None
               else build_table_ckm(ds, knn_k=run.cfg["ckm"]["knn_k"],
                                    idw_power=run.cfg["ckm"]["idw_power"]))
        meta = meta or ckm.meta
        cgm = cgm_predictor(ckm)
    elif d["cgm_backend"] == "mlp":
        cgm = mlp_predictor(mlp_mod.from_dict(read_json(run.input("model"))["model"]))
    else:
        raise UsageError(f"d2d.cgm_backend must be 'table' or 'mlp', got {d['cgm_backend']!r}")

    h_tx = meta.get("tx_height", d["height"])
    h_rx = meta.get("rx_height", d["height"])
    predictors = {"perfect": None, "cgm": cgm,
                  "plfit": plfit_predictor(pl, scene.band_plan, h_tx, h_rx)}
    dcfg = D2dConfig(int(d["n_pairs"]), tuple(d["pair_distance"]), d["height"],
                     d["tx_power_dbm"], d["noise_dbm"])
    trials, rows = [], []
    for i in range(int(d["n_seeds"])):
        seed = run.cfg["seed"] + i
        prob = draw_problem(scene, dcfg, np.random.default_rng(seed))
        rep = run_d2d_experiment(scene, prob, predictors, oracle)
        entry = {"seed": seed, "sum_rate": rep.rates(),
                 "assignment": {k: r.assignment for k, r in rep.schemes.items()},
                 "pairs": {"tx": prob.tx, "rx": prob.rx}}
        if d["include_gains"]:
            entry["true_gains_db"] = rep.true_gains_db
            entry["predicted_gains_db"] = {k: r.predicted_gains_db for k, r in rep.schemes.items()}
        trials.append(entry)
        r = rep.rates()
        rows.append([seed, r["perfect"], r["cgm"], r["plfit"]])
    arr = np.array([r[1:] for r in rows])
    mean = arr.mean(axis=0)
    summary = {"mean_sum_rate": dict(zip(["perfect", "cgm", "plfit"], mean)),
               "ratio_to_perfect": dict(zip(["perfect", "cgm", "plfit"], mean / mean[0])),
               "n_seeds": len(rows)}
    doc = {"summary": summary, "plfit_model": pl.to_dict(), "trials": trials,
           "notes": {"rate": "sum log2(1+SINR), unit bandwidth per sub-band",
                     "scoring": "assignments scored on oracle gains",
                     "band_gain": "coherent sum of path phasors"}}
    write_json(run.out / "d2d_report.json", doc, run.echo())
    write_atomic(run.out / "d2d_summary.csv",
                 table_to_csv(["seed", "perfect", "cgm", "plfit"], rows, run.echo()))
    log.info("mean sum rate perfect=%.3f cgm=%.3f plfit=%.3f", *mean)
    return run.out / "d2d_report.json"


def cmd_eval_beam(run: Run):
    scene = run.scene()
    b = run.cfg["beam"]
    cpm = _ckm(run, "cpm")
    bcfg = BeamExperimentConfig(tuple(int(n) for n in b["n_y_list"]), int(b["n_z"]),
                                tuple(float(e) for e in b["errors"]), int(b["n_locations"]),
                                float(b["ue_height"]), float(b["ref_gain_db"]), b["p_over_n"],
                                b["cpm_fallback"])
    rep = run_beam_experiment(scene, cpm, bcfg, run.cfg["seed"], run.oracle())
    cells, rows = [], []
    for n_y in bcfg.n_y_list:
        perf = rep.average("perfect", n_y)
        for scheme, errs in (("perfect", (0.0,)), ("cpm", bcfg.errors), ("location", bcfg.errors)):
            for e in errs:
                avg = rep.average(scheme, n_y, e)
                cells.append({"scheme": scheme, "n_y": n_y, "n_z": bcfg.n_z, "mean_err_m": e,
                              "avg_rate": avg, "ratio_to_perfect": avg / perf})
                rows.append([scheme, n_y, bcfg.n_z, float(e), avg, avg / perf])
    doc = {"cells": cells, "p_over_n": bcfg.snr_scale(),
           "n_locations": len(rep.locations), "locations": rep.locations,
           "paths_per_location": rep.n_paths,
           "notes": {"rate": "log2(1 + p_over_n |w^H h|^2)",
                     "p_over_n": f"10 bit/s/Hz for a {bcfg.ref_gain_db} dB path on a "
                                 "100-element matched beam unless set explicitly"}}
    write_json(run.out / "beam_report.json", doc, run.echo())
    write_atomic(run.out / "beam_rates.csv",
                 table_to_csv(["scheme", "n_y", "n_z", "mean_err_m", "avg_rate", "ratio_to_perfect"],
                              rows, run.echo()))
    return run.out / "beam_report.json"


def cmd_export_map(run: Run):
    e = run.cfg["export"]
    p = run.input("ckm", required=False)
    if p is not None:
        ckm = load_ckm(p)
    else:
        ds = _dataset(run)
        ckm = build_table_ckm(ds, knn_k=run.cfg["ckm"]["knn_k"], idw_power=run.cfg["ckm"]["idw_power"])
    region = e["region"]
    if region is None:
        region = run.scene().bounds
    idx = slot_index(ckm.kind, e["slot"])
    xs, ys, grid = export_grid(ckm, region, float(e["resolution"]), idx, e["tx_xy"])
    name = str(e["slot"])
    path = run.out / f"map_{name}.csv"
    write_atomic(path, grid_to_csv(xs, ys, grid, run.echo(),
                                   {"slot": name, "slot_index": idx, "kind": ckm.kind}))
    return path


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "sample": cmd_sample,
    "build-ckm": cmd_build_ckm,
    "train-mlp": cmd_train_mlp,
    "fit-pl": cmd_fit_pl,
    "eval-d2d": cmd_eval_d2d,
    "eval-beam": cmd_eval_beam,
    "export-map": cmd_export_map,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ckmap", description="Channel knowledge map toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", default=".", help="output directory")
        if name == "export-map":
            sp.add_argument("--slot", help="value column to export, e.g. azimuth1 or gain_db_3")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("missing command; choose from " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        run = Run(args.config, args.seed, args.out)
        if getattr(args, "slot", None):
            run.cfg["export"]["slot"] = args.slot
        out = COMMANDS[args.command](run)
        print(out)
        return 0
    except UsageError as exc:
        print(f"ckmap: usage error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, CkmError, ValueError, RuntimeError, OSError) as exc:
        print(f"ckmap: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
