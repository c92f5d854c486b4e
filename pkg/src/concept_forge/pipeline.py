"""World generation, training and evaluation wired together, plus the grid runner.

All randomness of one cell derives from its seed through named substreams, so
each stage can be rerun alone with the same result.
"""
import csv
import dataclasses
import io as _io
import logging
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .concepts import generate_random_system
from .evaluation import evaluate, true_valuations
from .exceptions import ConceptForgeError
from .learner import TrainConfig, encode, train
from .rng import substream
from .sampler import generate_dataset
from .world import World, mix, random_gmm, random_mixing, sample_base

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["mixing", "n", "d_z", "d_x", "r2", "mcc", "seed", "wall_time",
                  "config_hash", "status", "error"]


def build_world(wc, seed):
    gmm = random_gmm(wc.d_z, substream(seed, "gmm"), K=wc.gmm_components)
    m = wc.n + 1 if wc.m is None else wc.m
    anchors = sample_base(gmm, substream(seed, "anchors"), m) if wc.valuations == "anchored" else None
    system = generate_random_system(wc.n, wc.d_z, m, wc.sigma2, substream(seed, "concepts"),
                                    valuation_scale=wc.valuation_scale, anchors=anchors)
    f = random_mixing(wc.mixing, wc.d_z, wc.d_x, substream(seed, "mixing"), hidden=wc.mixing_hidden)
    return World(system, gmm, f)


def sample_world(world, sc, seed):
    return generate_dataset(world, substream(seed, "sampler"), sc.samples_per_env,
                            budget_factor=sc.budget_factor)


def encoder_hidden(tc, mixing):
    kind = mixing if tc.encoder == "auto" else tc.encoder
    return () if kind == "linear" else tuple(tc.hidden)


def train_world(X_envs, world, tc, seed):
    cfg = TrainConfig(tc.epochs, tc.l1_weight, tc.lr_head, tc.lr_encoder, tc.batch_size, seed=seed)
    structure = [c.atom_indices for c in world.system.concepts]
    return train(X_envs, world.system.n, structure, cfg,
                 hidden=encoder_hidden(tc, world.mixing.kind))


def evaluate_model(model, world, ec, seed):
    """Metrics on fresh base samples drawn from the ``eval`` substream."""
    Z = sample_base(world.gmm, substream(seed, "eval"), ec.n_samples)
    recovered = encode(model, mix(world.mixing, Z))
    return evaluate(recovered, true_valuations(world.system, Z),
                    eval_data=f"{ec.n_samples} fresh base samples")


def run_cell(config, row, seed):
    """One (row, seed) cell.  Failures are returned as a row with ``status=failed``."""
    mixing, n, d_z, d_x = row
    cfg = dataclasses.replace(config, world=dataclasses.replace(
        config.world, mixing=mixing, n=n, d_z=d_z, d_x=d_x))
    out = {"mixing": mixing, "n": n, "d_z": d_z, "d_x": d_x, "r2": "", "mcc": "",
           "seed": seed, "config_hash": config.config_hash(), "status": "ok", "error": ""}
    t0 = time.perf_counter()
    try:
        world = build_world(cfg.world, seed)
        data = sample_world(world, cfg.sampler, seed)
        model, _ = train_world(data.X, world, cfg.train, seed)
        report = evaluate_model(model, world, cfg.eval, seed)
        out["r2"], out["mcc"] = report.r2, report.mcc
    except (ConceptForgeError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("cell %s seed %s failed: %s", row, seed, exc)
        out["status"] = "failed"
        out["error"] = f"{type(exc).__name__}: {exc}"
    out["wall_time"] = time.perf_counter() - t0
    log.info("cell %s seed %s: r2=%s mcc=%s", row, seed, out["r2"], out["mcc"])
    return out


def _run_cell_args(args):
    return run_cell(*args)


def run_grid(config, jobs=1):
    """Every (row, seed) cell in row-major order; returns the per-seed result rows."""
    cells = [(config, row, seed) for row in config.grid_rows() for seed in config.seeds]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell_args, cells))
    return [_run_cell_args(c) for c in cells]


def summarize(results, config):
    """Per-row means over successful seeds."""
    rows = []
    for row in config.grid_rows():
        cells = [r for r in results if (r["mixing"], r["n"], r["d_z"], r["d_x"]) == tuple(row)]
        ok = [r for r in cells if r["status"] == "ok"]
        rows.append({
            "mixing": row[0], "n": row[1], "d_z": row[2], "d_x": row[3],
            "r2": float(np.mean([r["r2"] for r in ok])) if ok else None,
            "mcc": float(np.mean([r["mcc"] for r in ok])) if ok else None,
            "n_seeds": len(ok), "n_failed": len(cells) - len(ok),
        })
    return {"config_hash": config.config_hash(), "seeds": list(config.seeds), "rows": rows}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def results_csv(results, exclude=()):
    """CSV text of the result rows; ``exclude`` drops columns (e.g. ``wall_time``)."""
    cols = [c for c in RESULT_COLUMNS if c not in exclude]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in results:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()
