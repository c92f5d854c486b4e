"""Command line entry point: ``concept-forge <command> [options]``.

Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 numerical
divergence during training.
"""
import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as cfio
from .config import load_config
from .exceptions import ConceptForgeError, ConfigError, NumericalDivergence

log = logging.getLogger("concept_forge")

EXIT_RUNTIME, EXIT_CONFIG, EXIT_DIVERGENCE = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int, help="root seed (default: first seed of the config)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for the grid")
    p.add_argument("--format", choices=("csv", "json"), default="json",
                   help="format of report files")


def build_parser():
    parser = _Parser(prog="concept-forge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    cmds = {
        "gen": "generate a world (concepts, base density, mixing)",
        "sample": "sample a dataset for every environment of a world",
        "train": "train the contrastive learner on a sampled dataset",
        "eval": "evaluate a checkpoint against the true valuations",
        "identify": "recover the environment-concept structure from exact oracles",
        "steer": "run a synthetic steering experiment",
        "grid": "run the full experiment grid",
        "plot": "render a history or results CSV as SVG",
    }
    ps = {}
    for name, help_text in cmds.items():
        ps[name] = sub.add_parser(name, help=help_text, description=help_text)
        _common(ps[name])
    for name in ("sample", "train", "eval", "identify"):
        ps[name].add_argument("--world", help="world JSON (default OUT/world.json)")
    ps["train"].add_argument("--data", help="dataset directory (default OUT/data)")
    ps["eval"].add_argument("--checkpoint", help="model checkpoint (default OUT/model.ckpt)")
    ps["steer"].add_argument("--pairs", help="counterfactual pairs (CSV or CFMX); "
                                             "default: drawn from a synthetic world")
    ps["plot"].add_argument("--input", required=True, help="history.csv or results.csv")
    return parser


def _seed(args, config):
    if args.seed is not None:
        return args.seed
    return config.seeds[0] if config.seeds else 0


def _provenance(config, seed):
    return {"config_hash": config.config_hash(), "seed": seed}


def _path(arg, out, default):
    return Path(arg) if arg else out / default


def _write_report(out, stem, record, fmt):
    """Write a flat dict as ``stem.json`` or a one-row ``stem.csv``."""
    if fmt == "json":
        path = out / f"{stem}.json"
        cfio.dump_json(path, record)
    else:
        path = out / f"{stem}.csv"
        flat = {k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in record.items()}
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(flat), lineterminator="\n")
            w.writeheader()
            w.writerow(flat)
    return path


def cmd_gen(args, config, out):
    from .pipeline import build_world

    seed = _seed(args, config)
    world = build_world(config.world, seed)
    path = out / "world.json"
    cfio.save_world(path, world, _provenance(config, seed))
    return path


def cmd_sample(args, config, out):
    from .pipeline import sample_world
    from .rng import substream
    from .sampler import expected_trials

    seed = _seed(args, config)
    world = cfio.load_world(_path(args.world, out, "world.json"))
    data = sample_world(world, config.sampler, seed)
    prov = _provenance(config, seed)
    cfio.save_dataset(out / "data", data, prov)
    stats = []
    for e, s in enumerate(data.stats, start=1):
        row = {"env": e, "trials": s.trials, "accepted": s.accepted, "rate": s.empirical_rate,
               "expected_trials": expected_trials(world.system, e, world.gmm,
                                                  substream(seed, "stats", e))}
        stats.append(row)
    cfio.dump_json(out / "data" / "stats.json", {"environments": stats, "provenance": prov})
    return out / "data"


def cmd_train(args, config, out):
    from .pipeline import encoder_hidden, train_world

    seed = _seed(args, config)
    world = cfio.load_world(_path(args.world, out, "world.json"))
    data = cfio.load_dataset(_path(args.data, out, "data"))
    model, history = train_world(data.X, world, config.train, seed)
    prov = _provenance(config, seed)
    header = {
        "provenance": prov,
        "seed": seed,
        "architecture": {"d_x": model.d_x, "n": model.n, "m": model.m,
                         "hidden": list(encoder_hidden(config.train, world.mixing.kind))},
        "config": dataclasses.asdict(config.train),
    }
    cfio.save_checkpoint(out / "model.ckpt", model, header)
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "total_loss", "ce_loss", "l1_loss", "seed", "config_hash"])
        for row in history.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]]
                       + [seed, prov["config_hash"]])
    return out / "model.ckpt"


def cmd_eval(args, config, out):
    from .pipeline import evaluate_model

    seed = _seed(args, config)
    world = cfio.load_world(_path(args.world, out, "world.json"))
    model, _ = cfio.load_checkpoint(_path(args.checkpoint, out, "model.ckpt"))
    report = evaluate_model(model, world, config.eval, seed)
    record = report.to_dict()
    record.update(_provenance(config, seed))
    _append_result(out / "results.csv", {
        "mixing": world.mixing.kind, "n": world.system.n, "d_z": world.system.d_z,
        "d_x": world.d_x, "r2": report.r2, "mcc": report.mcc, "seed": seed,
        "config_hash": record["config_hash"]})
    return _write_report(out, "eval", record, args.format)


def _append_result(path, row):
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow(row)


def cmd_identify(args, config, out):
    from .rng import substream
    from .structure import compare_to_truth, identify, oracle_forms

    seed = _seed(args, config)
    world = cfio.load_world(_path(args.world, out, "world.json"))
    recovered = identify(oracle_forms(world.system, substream(seed, "identify")))
    record = recovered.to_dict()
    record.update(compare_to_truth(world.system, recovered))
    record.update(_provenance(config, seed))
    return _write_report(out, "identify", record, args.format)


def cmd_steer(args, config, out):
    from .rng import substream
    from .steering import random_steering_world, steer_and_score

    sc = config.steer
    seed = _seed(args, config)
    world = random_steering_world(sc.d_act, sc.n_others, substream(seed, "steer_world"))
    if args.pairs:
        pairs = cfio.load_pairs(args.pairs)
    else:
        pairs = world.counterfactual_pairs(substream(seed, "steer_pairs"), sc.n_pairs,
                                           sc.noise, sc.d_emb)
        cfio.save_pairs_csv(out / "pairs.csv", pairs)
    if pairs.h_false.shape[1] != world.d_act:
        raise ConfigError(f"pairs have {pairs.h_false.shape[1]} activation dims, "
                          f"steer.d_act is {sc.d_act}")
    rng = substream(seed, "steer_queries")
    queries = world.activations(rng, sc.n_queries)
    emb = rng.standard_normal((sc.n_queries, pairs.emb.shape[1]))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    record = {
        "mean_vector": steer_and_score(world, pairs, sc.alpha, queries).to_dict(),
        "matrix": steer_and_score(world, pairs, sc.alpha, queries, emb).to_dict(),
    }
    record.update(_provenance(config, seed))
    return _write_report(out, "steer", record, args.format)


def cmd_grid(args, config, out):
    from .pipeline import results_csv, run_grid, summarize

    if args.seed is not None:
        config = dataclasses.replace(config, seeds=[args.seed])
    results = run_grid(config, jobs=max(1, args.jobs))
    (out / "results.csv").write_text(results_csv(results))
    summary = summarize(results, config)
    cfio.dump_json(out / "summary.json", summary)
    with open(out / "summary.csv", "w", newline="") as fh:
        cols = ["mixing", "n", "d_z", "d_x", "r2", "mcc", "n_seeds", "n_failed", "config_hash"]
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in summary["rows"]:
            w.writerow(dict(row, config_hash=summary["config_hash"]))
    return out / "results.csv"


def cmd_plot(args, config, out):
    from .plotting import plot_file

    path = out / (Path(args.input).stem + ".svg")
    plot_file(args.input, path, _provenance(config, _seed(args, config)))
    return path


COMMANDS = {"gen": cmd_gen, "sample": cmd_sample, "train": cmd_train, "eval": cmd_eval,
            "identify": cmd_identify, "steer": cmd_steer, "grid": cmd_grid, "plot": cmd_plot}


def _setup_logging():
    level = os.environ.get("CONCEPT_FORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args.config)  # validated before anything is written
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = COMMANDS[args.command](args, config, out)
        print(path)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergence as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConceptForgeError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
