"""Command-line entry point: ``screenode <verb> --config C --seed S --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.

All randomness derives from the global seed as
``SeedSequence([seed, component, *indices])`` with components
1 cell states, 2 counts, 3 batch shifts, 4 batch plan, 5 training seeds,
6 steady-state baseline splits, 7 pseudotime populations,
8 batch-experiment replicates, 9 replica screen.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .batch_error import (
    BatchExperimentConfig,
    Correction,
    build_f_star,
    compare_strategies,
    default_batch_screen,
    estimate_epsilon,
    grn_oracle,
    summary_csv,
)
from .compare import DEFAULT_TRAIN, ModelConfig, train_compare
from .config import VERBS, load_config, load_network, parse_pmap
from .errors import ConfigError, ScreenError
from .experiment import (
    BASELINE,
    NO_PERTURBATION,
    ExperimentCondition,
    MediaCondition,
    classify_path,
    enumerate_conditions,
    grid_index,
    parse_key,
)
from .grn import differentiate, population_csv, sample_population
from .io import dump_json, gene_header, read_table, rows_to_csv, write_text_atomic
from .losses import LossConfig, Pair, PairedDataset, final_time_split
from .measurement import (
    BatchPlan,
    MeasureParams,
    NoiseMode,
    Strategy,
    apply_batch_noise,
    make_batch_noise,
    make_batch_plan,
    pseudobulk,
    sample_counts_many,
)
from .node import TrainConfig
from .pseudotime import assign_perturbed, build_trajectory_pairs, order_controls
from .replica import ReplicaConfig, build_replica
from .steady import TimeSeriesDataset, baseline_band, detect_steady, lfc_table_csv, select_variable_genes

SEED_DERIVATION = ("SeedSequence([seed, component, *indices]); components: 1 cell states, 2 counts, "
                   "3 batch shifts, 4 batch plan, 5 training seeds, 6 steady-state baseline splits, "
                   "7 pseudotime populations, 8 batch-experiment replicates, 9 replica screen")

CELL_LEAD = ["cell_id", "condition_key", "batch", "path"]
BULK_LEAD = ["condition_key", "time"]
POP_LEAD = ["cell_id", "latent_time"]


def derive(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


@contextlib.contextmanager
def config_phase():
    """Turn validation failures raised while resolving a config into ConfigError."""
    try:
        yield
    except ConfigError:
        raise
    except (ScreenError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _pmap_workers(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- table writers ------------------------------------------------------------

def _matrix_csv(header, lead_rows, matrix, integer: bool) -> str:
    """Fast CSV for a leading-columns + numeric-matrix table."""
    lines = [rows_to_csv(header, []).rstrip("\n")]
    conv = str if integer else (lambda v: repr(float(v)))
    for lead, row in zip(lead_rows, matrix):
        lead_txt = rows_to_csv(["x"] * len(lead), [lead]).split("\n", 1)[1].rstrip("\n")
        lines.append(lead_txt + "," + ",".join(map(conv, row.tolist())))
    return "\n".join(lines) + "\n"


def cells_csv(lead_rows, counts, integer=True) -> str:
    return _matrix_csv(CELL_LEAD + gene_header(counts.shape[1]), lead_rows, counts, integer)


def bulk_csv(keys, times, matrix) -> str:
    return _matrix_csv(BULK_LEAD + gene_header(matrix.shape[1]), list(zip(keys, times)), matrix, False)


def _measure_params(rec: dict) -> tuple[MeasureParams, float]:
    rec = dict(rec or {})
    depth = float(rec.pop("depth", 1000.0))
    return MeasureParams(**rec), depth


# -- verbs --------------------------------------------------------------------

def cmd_simulate(cfg: dict, seed: int, out: Path, threads: int) -> dict:
    if "replica" in cfg:
        return _simulate_replica(cfg, seed, out)
    with config_phase():
        spec = load_network(cfg["network"])
        perts = [parse_pmap(p) for p in cfg.get("perturbations", [])]
        medias = [MediaCondition(m) for m in cfg.get("medias", [])]
        times = [float(t) for t in cfg["times"]]
        grid = enumerate_conditions(perts, medias, times[0])
        for c in grid:
            spec.multipliers(c.perturbation)
            spec.media_vector(c.media)
        index = grid_index(grid)
        params, depth = _measure_params(cfg.get("measure"))
        batch = cfg.get("batch", {})
        n_b = int(batch.get("n_batches", 1))
        plan = make_batch_plan(grid, n_b, Strategy(batch.get("strategy", "random")), derive(seed, 4))
        noise = make_batch_noise(n_b, spec.n_genes, float(batch.get("noise_scale", 0.0)), derive(seed, 3),
                                 NoiseMode(batch.get("mode", "additive")))
    n_cells = int(cfg.get("n_cells", 100))
    jitter = float(cfg.get("jitter", 0.1))
    dt = float(cfg.get("dt", 0.01))
    state_rows, count_rows, lead, groups = [], [], [], []
    for k, cond in enumerate(grid):
        batches = plan.batches_of(*index[cond])
        for q, t in enumerate(times):
            c = cond.with_time(t)
            states = sample_population(spec, c, n_cells, jitter, derive(seed, 1, k, q), dt)
            cell_batch = [batches[m % len(batches)] for m in range(n_cells)]
            noisy = np.stack([apply_batch_noise(s, b, noise) for s, b in zip(states, cell_batch)])
            counts = sample_counts_many(noisy, params, depth, np.random.default_rng(derive(seed, 2, k, q)))
            start = len(lead)
            for m in range(n_cells):
                lead.append((start + m, c.key(), cell_batch[m], int(classify_path(c))))
            state_rows.append(states)
            count_rows.append(counts)
            groups.append((c, range(start, start + n_cells)))
    states = np.concatenate(state_rows)
    counts = np.concatenate(count_rows)
    target = float(np.median(counts.sum(axis=1)))
    lin = {(g, c.time): pseudobulk(counts[list(r)], target, log=False) for g, (c, r) in enumerate(groups)}
    keep = cfg.get("keep_genes")
    genes = (np.arange(spec.n_genes) if keep is None
             else select_variable_genes({(g // len(times), t): v for (g, t), v in lin.items()}, times, keep))
    logs = np.stack([pseudobulk(counts[list(r)][:, :], target, log=True)[genes] for _, r in groups])
    files = {
        "states.csv": cells_csv(lead, states, integer=False),
        "cells.csv": cells_csv(lead, counts),
        "pseudobulk.csv": bulk_csv([c.key() for c, _ in groups], [c.time for c, _ in groups], logs),
        "genes.json": dump_json([int(g) for g in genes]),
        "conditions.json": dump_json([dict(c.to_json(), key=c.key()) for c, _ in groups]),
        "plan.json": dump_json({"n_batches": plan.n_batches, "assignment": sorted(map(list, plan.assignment))}),
    }
    return files


def _replica_config(rec: dict) -> ReplicaConfig:
    rec = dict(rec)
    if "days" in rec:
        rec["days"] = tuple(rec["days"])
    return ReplicaConfig(**rec)


def _simulate_replica(cfg, seed, out) -> dict:
    with config_phase():
        rcfg = _replica_config(cfg["replica"])
        params, depth = _measure_params(cfg.get("measure"))
        if "depth" in (cfg.get("measure") or {}):
            rcfg = ReplicaConfig(**{**rcfg.__dict__, "depth": depth})
    screen = build_replica(derive(seed, 9), rcfg, params)
    lead, rows, keys, times, bulk = [], [], [], [], []
    for (i, day), cells in screen.series.cells.items():
        c = ExperimentCondition(screen.perturbations[i], BASELINE, float(day))
        for _ in range(len(cells)):
            lead.append((len(lead), c.key(), 0, int(classify_path(c))))
        rows.append(cells)
        keys.append(c.key())
        times.append(float(day))
        bulk.append(screen.log_profiles[(i, day)])
    return {
        "cells.csv": cells_csv(lead, np.concatenate(rows)),
        "pseudobulk.csv": bulk_csv(keys, times, np.stack(bulk)),
        "genes.json": dump_json([int(g) for g in screen.genes]),
        "perturbations.json": dump_json([p.key() for p in screen.perturbations]),
        "labels.json": dump_json({"converging": screen.converging, "diverging": screen.diverging}),
    }


def _read(path_str: str, lead, integer: bool):
    p = Path(path_str)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    return read_table(p, lead, integer)


def cmd_measure(cfg, seed, out, threads) -> dict:
    cols, states = _read(cfg["states"], CELL_LEAD, integer=False)
    with config_phase():
        params, depth = _measure_params(cfg.get("measure"))
        batch = [int(b) for b in cols["batch"]]
        nz = cfg.get("noise", {})
        n_b = max(batch) + 1 if batch else 1
        noise = make_batch_noise(n_b, states.shape[1], float(nz.get("noise_scale", 0.0)), derive(seed, 3),
                                 NoiseMode(nz.get("mode", "additive")))
        for k in dict.fromkeys(cols["condition_key"]):
            parse_key(k)
    noisy = np.stack([apply_batch_noise(s, b, noise) for s, b in zip(states, batch)]) if len(states) else states
    counts = sample_counts_many(noisy, params, depth, np.random.default_rng(derive(seed, 2)))
    lead = list(zip(cols["cell_id"], cols["condition_key"], cols["batch"], cols["path"]))
    order = list(dict.fromkeys(cols["condition_key"]))
    target = float(np.median(counts.sum(axis=1)))
    keyarr = np.array(cols["condition_key"], dtype=object)
    bulk = np.stack([pseudobulk(counts[keyarr == k], target) for k in order])
    return {
        "cells.csv": cells_csv(lead, counts),
        "pseudobulk.csv": bulk_csv(order, [parse_key(k).time for k in order], bulk),
    }


def _index_conditions(keys):
    """Perturbation / media vocabularies in first-appearance order, control and baseline first."""
    conds = [parse_key(k) for k in keys]
    perts = [NO_PERTURBATION] + list(dict.fromkeys(c.perturbation for c in conds if not c.perturbation.is_none))
    medias = [BASELINE] + sorted({c.media for c in conds if not c.media.is_baseline}, key=lambda m: m.id)
    return conds, perts, medias


def pairs_from_pseudobulk(keys, matrix) -> PairedDataset:
    """Each condition paired with the unperturbed baseline-media profile at the same time."""
    conds, perts, medias = _index_conditions(keys)
    control = {c.time: row for c, row in zip(conds, matrix) if c.perturbation.is_none and c.media.is_baseline}
    pairs = []
    for c, row in zip(conds, matrix):
        if c.time not in control:
            raise ConfigError(f"no unperturbed baseline profile at time {c.time}")
        pairs.append(Pair(control[c.time], c, row))
    return PairedDataset(pairs, perts, medias)


def _train_job(args):
    data, split, s, w, model_cfg, tconfig = args
    from .compare import run_variant

    return run_variant(data, split, s, w, model_cfg, tconfig)


def cmd_train_compare(cfg, seed, out, threads) -> dict:
    extra = {}
    with config_phase():
        if "replica" in cfg:
            screen = build_replica(derive(seed, 9), _replica_config(cfg["replica"]))
            steady = screen.detect(seed=derive(seed, 6))
            data = screen.paired(steady)
            extra["perturbations.json"] = dump_json([p.key() for p in screen.perturbations])
        else:
            cols, matrix = _read(cfg["pseudobulk"], BULK_LEAD, integer=False)
            data = pairs_from_pseudobulk(cols["condition_key"], matrix)
            st = cfg["steady"]
            if isinstance(st, str):
                p = Path(st)
                if not p.is_file():
                    raise ConfigError(f"steady: file not found: {p}")
                st = json.loads(p.read_text())
            steady = [int(i) for i in st]
            for i in steady:
                if not 0 <= i < len(data.perturbations):
                    raise ConfigError(f"steady index {i} outside the {len(data.perturbations)} perturbations")
            data = PairedDataset(data.pairs, data.perturbations, data.medias, frozenset((i, 0) for i in steady))
        test = cfg.get("test_perturbations")
        if test is None:
            test = [i for i in range(1, len(data.perturbations)) if i not in set(steady)]
        split = final_time_split(data, test)
        if not split[1]:
            raise ConfigError("held-out set is empty")
        m = cfg.get("model", {})
        model_cfg = ModelConfig(tuple(m.get("hidden", (64, 64))), tuple(m.get("embed", (8, 4))),
                                int(m.get("n_steps", 10)), bool(m.get("autonomous", False)))
        t = cfg.get("train", {})
        tconfig = TrainConfig(learning_rate=float(t.get("learning_rate", DEFAULT_TRAIN.learning_rate)),
                              epochs=int(t.get("epochs", DEFAULT_TRAIN.epochs)),
                              batch_size=int(t.get("batch_size", 0)), loss=LossConfig())
        n_seeds = int(cfg.get("seeds", 20))
    seeds = [derive(seed, 5, k) for k in range(n_seeds)]
    summary = train_compare(data, split, seeds, float(cfg.get("steady_weight", 1.0)), model_cfg, tconfig,
                            bool(cfg.get("standardize", True)), workers=threads)
    files = dict(extra)
    for k, s in enumerate(seeds):
        for variant in ("baseline", "steady"):
            files[f"curves/seed{k:03d}_{variant}.csv"] = summary.runs[(s, variant)].curves_csv()
    rec = summary.to_json()
    rec["steady_set"] = sorted(steady)
    rec["test_keys"] = split[1]
    files["summary.json"] = dump_json(rec)
    files["verdict.txt"] = summary.verdict() + "\n"
    return files


def _batch_replicate(args):
    bcfg, = args
    return compare_strategies(bcfg)


def cmd_batch_experiment(cfg, seed, out, threads) -> dict:
    with config_phase():
        screen = cfg.get("screen", {"builtin": "default"})
        if "builtin" in screen:
            spec, perts, medias, time = default_batch_screen()
        else:
            spec = load_network(screen["network"])
            perts = tuple(parse_pmap(p) for p in screen["perturbations"])
            medias = tuple(MediaCondition(m) for m in screen["medias"])
            time = float(screen["time"])
        base = BatchExperimentConfig(
            spec, tuple(perts), tuple(medias), time,
            noise_scale=float(cfg.get("noise_scale", 0.1)),
            n_batches=cfg.get("n_batches"),
            trials=int(cfg.get("trials", 50)),
            mode=NoiseMode(cfg.get("mode", "additive")),
            correction=Correction(cfg.get("correction", "none")),
            strategies=tuple(Strategy(s) for s in cfg.get("strategies", [s.value for s in Strategy])),
            dt=float(cfg.get("dt", 0.01)),
        )
        conds = base.conditions
        for c in conds:
            spec.multipliers(c.perturbation)
            spec.media_vector(c.media)
        plan = None
        if "plan" in cfg:
            n_b = int(cfg["plan"]["n_batches"])
            cells = set(grid_index(conds).values())
            trip = frozenset(tuple(int(v) for v in t) for t in cfg["plan"]["assignment"])
            for i, j, b in trip:
                if (i, j) not in cells or b >= n_b:
                    raise ConfigError(f"plan entry {(i, j, b)} outside the grid or batch range")
            plan = BatchPlan(n_b, trip)
    reps = int(cfg.get("replicates", 1))
    if plan is not None:
        noise = make_batch_noise(plan.n_batches, spec.n_genes, base.noise_scale, derive(seed, 3), base.mode)
        fs = build_f_star(grn_oracle(spec, base.dt), plan, noise, base.correction, conds, spec.baseline)
        rep = estimate_epsilon(fs, None, conds, base.trials, derive(seed, 8, 0), "custom")
        results = [[rep]]
    else:
        jobs = [(BatchExperimentConfig(**{**base.__dict__, "seed": derive(seed, 8, r)}),) for r in range(reps)]
        results = _pmap_workers(_batch_replicate, jobs, threads)
    names = [r.strategy for r in results[0]]
    agg = []
    for name in sorted(names):
        eps = np.array([next(r for r in rs if r.strategy == name).epsilon for rs in results])
        first = next(r for r in results[0] if r.strategy == name)
        err = first.stderr if len(eps) == 1 else float(eps.std(ddof=1) / np.sqrt(len(eps)))
        agg.append(type(first)(name, float(eps.mean()), err, {}, first.trials, first.noise_scale))
    agg.sort(key=lambda r: (r.epsilon, r.strategy))
    firsts = {n: sum(rs[0].strategy == n for rs in results) for n in sorted(names)}
    rank = {"replicates": len(results), "first_place": firsts}
    if {"control_everywhere", "per_media"} <= set(names):
        eps = lambda rs, n: next(r for r in rs if r.strategy == n).epsilon  # noqa: E731
        rank["control_everywhere_below_per_media"] = sum(
            eps(rs, "control_everywhere") < eps(rs, "per_media") for rs in results)
    return {
        "reports.json": dump_json([[r.to_json() for r in rs] for rs in results]),
        "summary.csv": summary_csv(agg),
        "ranking.json": dump_json(rank),
    }


def cmd_detect_steady(cfg, seed, out, threads) -> dict:
    cols, counts = _read(cfg["cells"], CELL_LEAD, integer=True)
    with config_phase():
        conds, perts, medias = _index_conditions(cols["condition_key"])
        if len(medias) > 1:
            raise ConfigError("steady-state detection expects baseline-media conditions only")
        pidx = {p: i for i, p in enumerate(perts)}
        keyarr = np.array(cols["condition_key"], dtype=object)
        cells = {}
        for k in dict.fromkeys(cols["condition_key"]):
            c = parse_key(k)
            cells[(pidx[c.perturbation], c.time)] = counts[keyarr == k]
        days = sorted({d for _, d in cells})
        data = TimeSeriesDataset.from_cells(days, cells)
        keep = cfg.get("keep_genes")
        if keep is not None:
            data = data.restrict(select_variable_genes(data.profiles, days, keep))
        margin = float(cfg.get("margin", 2.0))
        repeats = int(cfg.get("repeats", 5))
        pc = float(cfg.get("pseudocount", 1.0))
    band = baseline_band(data, repeats, derive(seed, 6), pc)
    s = detect_steady(data, margin, pseudocount=pc, band=band)
    return {
        "steady.json": dump_json(s),
        "lfc.csv": lfc_table_csv(data, band, pc),
        "perturbations.json": dump_json([p.key() for p in perts]),
    }


def cmd_pseudotime(cfg, seed, out, threads) -> dict:
    latent, files = None, {}
    with config_phase():
        if "network" in cfg:
            spec = load_network(cfg["network"])
            t = float(cfg.get("t", 8.0))
            pmap = parse_pmap(cfg.get("perturbation", {}))
            ctrl, latent = differentiate(spec, int(cfg.get("n_controls", 200)), t, derive(seed, 7, 0),
                                         jitter=cfg.get("jitter"))
            pert, plat = differentiate(spec, int(cfg.get("n_perturbed", 100)), t, derive(seed, 7, 1),
                                    perturbation=pmap, jitter=cfg.get("jitter"))
            start = spec.baseline
            files["controls.csv"] = population_csv(ctrl, latent)
            files["perturbed.csv"] = population_csv(pert, plat)
        else:
            t = float(cfg["t"])
            pmap = parse_pmap(cfg.get("perturbation", {}))
            cc, ctrl = _read(cfg["controls"], POP_LEAD, integer=False)
            _, pert = _read(cfg["perturbed"], POP_LEAD, integer=False)
            if ctrl.shape[1] != pert.shape[1]:
                raise ConfigError("control and perturbed tables have different gene counts")
            start = cfg.get("start")
            if start is not None and len(start) != ctrl.shape[1]:
                raise ConfigError("start must have one entry per gene")
            lt = np.array([float(v) if v else np.nan for v in cc["latent_time"]])
            latent = None if np.isnan(lt).any() else lt
    ctrl_log, pert_log = np.log1p(ctrl), np.log1p(pert)
    ca = order_controls(ctrl_log, t, None if start is None else np.log1p(np.asarray(start, dtype=float)))
    pa = assign_perturbed(ca, ctrl_log, pert_log)
    summary = {"n_controls": len(ca), "n_perturbed": len(pa),
               "perturbed_sigma_quartiles": [float(q) for q in np.percentile(pa.sigma, [25, 50, 75])]}
    try:
        pairs = build_trajectory_pairs(ctrl_log, pert_log, ca, pa, pmap, stride=int(cfg.get("stride", 1)))
        summary["n_pairs"] = len(pairs.pairs)
    except ScreenError:
        summary["n_pairs"] = 0
    if latent is not None:
        from scipy.stats import spearmanr

        summary["spearman_control"] = float(spearmanr(ca.sigma, latent)[0])
    files["assignments.csv"] = ca.to_csv() + pa.to_csv(offset=len(ca), header=False)
    files["summary.json"] = dump_json(summary)
    return files


HANDLERS = {
    "simulate": cmd_simulate,
    "measure": cmd_measure,
    "train-compare": cmd_train_compare,
    "batch-experiment": cmd_batch_experiment,
    "detect-steady": cmd_detect_steady,
    "pseudotime": cmd_pseudotime,
}


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def run(command: str, config_path, seed: int | None, out, threads: int = 1) -> dict:
    """Execute one verb and write its files plus ``manifest.json``; returns the manifest."""
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg, seed = load_config(config_path, command, seed)
    out = Path(out)
    files = HANDLERS[command](cfg, seed, out, threads)
    for name, text in sorted(files.items()):
        write_text_atomic(out / name, text)
    manifest = {
        "command": command,
        "config": cfg,
        "seed": seed,
        "version": __version__,
        "seed_derivation": SEED_DERIVATION,
        "outputs": {name: _sha(text) for name, text in sorted(files.items())},
    }
    write_text_atomic(out / "manifest.json", dump_json(manifest))
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="screenode", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="JSON config or a previous manifest.json")
        p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes for seed replicates")
    args = parser.parse_args(argv)
    try:
        manifest = run(args.command, args.config, args.seed, args.out, args.threads)
    except ConfigError as exc:
        print(f"screenode: configuration error: {exc}", file=sys.stderr)
        return 2
    except (ScreenError, ValueError, FloatingPointError, ArithmeticError, OSError) as exc:
        print(f"screenode: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(f"{args.command}: wrote {len(manifest['outputs'])} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
