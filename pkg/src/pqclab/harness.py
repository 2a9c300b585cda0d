"""Experiment orchestration: scene sets, training runs, evaluation, sweeps and finetuning.

On-disk layout under ``out_dir``::

    config.txt                     full config echo
    scenes/<set>.jsonl             one scene record per line
    caches/scene_<id>.obs          observation caches
    experts/scene_<id>.ctg         cost-to-go dumps
    runs/<method>_seed<k>/         checkpoint.pqc, metrics.jsonl, loss.csv, eval.csv
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from pqclab.clone import (Method, SceneBundle, Dataset, dataset_to_bytes,
                          finetune_dqn, generate_batch_dataset, train_batch_pqc, train_online)
from pqclab.config import ExperimentConfig, dump_config
from pqclab.env import read_scenes, sample_scene, write_scenes
from pqclab.errors import FormatError, SceneInfeasible
from pqclab.evaluate import EvalReport, evaluate, greedy_policy, write_reports
from pqclab.nnet import QNetwork, load_checkpoint, save_checkpoint
from pqclab.planner import dump_cost_to_go, solve_scene
from pqclab.render import build_cache, load_cache, save_cache

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ scenes

def make_scenes(cfg: ExperimentConfig, which: str, count: int | None = None):
    grid = cfg.grid_spec()
    out = []
    for seed in cfg.scene_seeds(which, count):
        try:
            out.append(sample_scene(cfg.task, grid, cfg.clutter, seed))
        except SceneInfeasible as exc:
            raise SceneInfeasible(f"{which} scene seed {seed}: {exc}") from exc
    return out


def bundle_scene(scene, cfg: ExperimentConfig, cache=None) -> SceneBundle:
    return SceneBundle(scene, cache if cache is not None else build_cache(scene, cfg.render_config()),
                       solve_scene(scene))


def make_bundles(cfg: ExperimentConfig, which: str, count: int | None = None) -> list[SceneBundle]:
    """Scene set built in memory (no files)."""
    return [bundle_scene(s, cfg) for s in make_scenes(cfg, which, count)]


def gen_scenes(cfg: ExperimentConfig, sets: Sequence[str] = ("train", "holdout", "finetune"),
               counts: dict | None = None) -> dict[str, list[int]]:
    """Write scene files, expert dumps and caches; returns scene ids per set."""
    out = Path(cfg.out_dir)
    for sub in ("scenes", "caches", "experts"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    rcfg = cfg.render_config()
    ids = {}
    for which in sets:
        scenes = make_scenes(cfg, which, (counts or {}).get(which))
        write_scenes(out / "scenes" / f"{which}.jsonl", scenes)
        for sc in scenes:
            cache_path = out / "caches" / f"scene_{sc.id}.obs"
            if not cache_path.exists():
                save_cache(build_cache(sc, rcfg), cache_path)
            ctg_path = out / "experts" / f"scene_{sc.id}.ctg"
            if not ctg_path.exists():
                dump_cost_to_go(solve_scene(sc), ctg_path)
        ids[which] = [sc.id for sc in scenes]
        log.info("wrote %d %s scenes", len(scenes), which)
    return ids


def load_bundles(cfg: ExperimentConfig, which: str, count: int | None = None) -> list[SceneBundle]:
    out = Path(cfg.out_dir)
    path = out / "scenes" / f"{which}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path} missing; run gen-scenes first")
    scenes = read_scenes(path)
    if count is not None:
        if count > len(scenes):
            raise ValueError(f"{which} set has {len(scenes)} scenes, {count} requested")
        scenes = scenes[:count]
    fp = cfg.render_config().fingerprint()
    return [bundle_scene(sc, cfg, load_cache(out / "caches" / f"scene_{sc.id}.obs", fp, mmap=True))
            for sc in scenes]


def check_hygiene(train: Sequence[SceneBundle], holdout: Sequence[SceneBundle],
                  finetune: Sequence[SceneBundle] = ()) -> None:
    tr = {b.id for b in train}
    ho = {b.id for b in holdout}
    ft = {b.id for b in finetune}
    if tr & ho or ft & ho or ft & tr:
        raise ValueError("scene sets overlap")


# ------------------------------------------------------------------ training

@dataclass
class RunResult:
    net: QNetwork
    metrics: list
    loss_curve: list
    seconds: float
    dataset: Dataset | None = None


class MetricsStream:
    """Appends one JSON line per evaluation snapshot."""

    def __init__(self, path: Path | None):
        self.path = path
        self.rows: list[dict] = []
        if path is not None:
            path.write_text("")

    def write(self, row: dict) -> dict:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return row


def read_metrics(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{i}: {exc}") from exc
    return rows


def train_run(cfg: ExperimentConfig, seed: int, train: Sequence[SceneBundle],
              holdout: Sequence[SceneBundle], method=None, run_dir: Path | None = None,
              snapshots: int | None = None, episodes: int | None = None) -> RunResult:
    """Train one method with one seed; evaluates on both sets at each snapshot."""
    check_hygiene(train, holdout)
    method = Method(method or cfg.method)
    mcfg = cfg.method_config(method)
    rng = np.random.default_rng([seed, 0xC10E])
    net = QNetwork(cfg.net_spec(), seed=seed)
    snapshots = cfg.snapshots if snapshots is None else snapshots
    stream = MetricsStream(run_dir / "metrics.jsonl" if run_dir else None)

    def snap(progress, step, loss):
        tr = evaluate(greedy_policy(net), train, cfg.eval_episodes, cfg.eval_seed)
        ho = evaluate(greedy_policy(net), holdout, cfg.eval_episodes, cfg.eval_seed) if holdout else None
        return stream.write({"method": method.value, "seed": seed, "progress": round(progress, 6),
                             "step": step, "train_success": tr.success_rate,
                             "holdout_success": ho.success_rate if ho else float("nan"),
                             "loss": loss})

    t0 = time.process_time()
    ds = None
    if method is Method.BATCH_PQC:
        ds = generate_batch_dataset(train, cfg.episodes_per_scene, mcfg, rng)
        per_epoch = max(1, snapshots // max(mcfg.epochs, 1)) if snapshots else 0
        # snapshot progress is measured in epochs
        res = train_batch_pqc(net, ds, train, mcfg, rng, on_epoch=snap if snapshots else None,
                              snapshots_per_epoch=max(per_epoch, 1))
    else:
        n_ep = cfg.online_episodes if episodes is None else episodes
        every = max(1, n_ep // snapshots) if snapshots else 0

        def snap_online(ep, step, loss):
            return snap(ep / n_ep, step, loss)
        res = train_online(mcfg, cfg.schedule(n_ep), train, n_ep, rng, net,
                           on_snapshot=snap_online, snapshot_every=every)
    secs = time.process_time() - t0
    if run_dir is not None:
        save_checkpoint(run_dir / "checkpoint.pqc", net, res.optim,
                        {"method": method.value, "seed": seed, "train_ids": [b.id for b in train]})
        _write_loss_curve(run_dir / "loss.csv", res.loss_curve)
    return RunResult(net, stream.rows, res.loss_curve, secs, ds)


def _write_loss_curve(path: Path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("index", "loss"))
        for i, v in enumerate(curve):
            w.writerow((i, repr(float(v))))


def run_dir_for(cfg: ExperimentConfig, method, seed: int) -> Path:
    d = Path(cfg.out_dir) / "runs" / f"{Method(method).value}_seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_train(cfg: ExperimentConfig) -> list[Path]:
    train = load_bundles(cfg, "train")
    holdout = load_bundles(cfg, "holdout")
    dirs = []
    for seed in cfg.seed_list:
        d = run_dir_for(cfg, cfg.method, seed)
        (d / "config.txt").write_text(dump_config(cfg))
        res = train_run(cfg, seed, train, holdout, run_dir=d)
        log.info("%s seed %d: %.1fs cpu", cfg.method, seed, res.seconds)
        dirs.append(d)
    return dirs


def cmd_eval(cfg: ExperimentConfig, checkpoint, which: str = "holdout",
             episodes: int | None = None, out_csv=None) -> EvalReport:
    net, _, _ = load_checkpoint(checkpoint, cfg.net_spec())
    bundles = load_bundles(cfg, which)
    rep = evaluate(greedy_policy(net), bundles, episodes or cfg.eval_episodes, cfg.eval_seed, tag=which)
    if out_csv is not None:
        write_reports(out_csv, [rep])
    return rep


# ------------------------------------------------------------------ sweeps

def sweep_scenes(cfg: ExperimentConfig, train_pool: Sequence[SceneBundle],
                 holdout: Sequence[SceneBundle], counts: Sequence[int] | None = None,
                 seeds: Sequence[int] | None = None) -> list[dict]:
    """BatchPQC per scene count with a fixed total episode budget."""
    counts = list(counts or cfg.sweep_count_list)
    if counts != sorted(counts):
        raise ValueError("scene counts must be ascending")
    if counts[-1] > len(train_pool):
        raise ValueError("not enough training scenes for the largest count")
    budget = cfg.episodes_per_scene * cfg.n_train
    rows = []
    for seed in seeds if seeds is not None else cfg.seed_list:
        for n in counts:
            eps = max(1, budget // n)
            sub = list(train_pool[:n])
            c = replace(cfg, episodes_per_scene=eps)
            res = train_run(c, seed, sub, holdout, method=Method.BATCH_PQC, snapshots=0)
            tr = evaluate(greedy_policy(res.net), sub, cfg.eval_episodes, cfg.eval_seed)
            ho = evaluate(greedy_policy(res.net), holdout, cfg.eval_episodes, cfg.eval_seed)
            rows.append({"seed": seed, "scenes": n, "episodes_per_scene": eps,
                         "train_success": tr.success_rate, "holdout_success": ho.success_rate})
            log.info("sweep seed %d n=%d train %.3f holdout %.3f", seed, n, tr.success_rate,
                     ho.success_rate)
    return rows


SWEEP_COLUMNS = ("seed", "scenes", "episodes_per_scene", "train_success", "holdout_success")


def write_rows(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def cmd_sweep_scenes(cfg: ExperimentConfig) -> Path:
    counts = cfg.sweep_count_list
    # scene seeds are deterministic, so the pool extends the on-disk training set
    train = make_bundles(cfg, "train", max(counts))
    holdout = make_bundles(cfg, "holdout")
    rows = sweep_scenes(cfg, train, holdout, counts)
    path = Path(cfg.out_dir) / "sweep_scenes.csv"
    write_rows(path, rows, SWEEP_COLUMNS)
    return path


def finetune_run(cfg: ExperimentConfig, net: QNetwork, seed: int, train, holdout, fresh,
                 episodes: int | None = None) -> tuple[QNetwork, list[EvalReport]]:
    """Before/after evaluation around DQN finetuning on a fresh scene set."""
    check_hygiene(train, holdout, fresh)
    n_ep = cfg.finetune_episodes if episodes is None else episodes

    def reports(tag):
        return [evaluate(greedy_policy(net), train, cfg.eval_episodes, cfg.eval_seed, f"{tag}_train"),
                evaluate(greedy_policy(net), holdout, cfg.eval_episodes, cfg.eval_seed, f"{tag}_holdout")]
    before = reports("before")
    mcfg = cfg.method_config(Method.FINETUNE_DQN, lr=cfg.finetune_lr)
    rng = np.random.default_rng([seed, 0xF1E7])
    finetune_dqn(net, fresh, cfg.schedule(n_ep), n_ep, mcfg, rng)
    return net, before + reports("after")


def cmd_finetune(cfg: ExperimentConfig, checkpoint, out_dir=None) -> Path:
    net, _, extra = load_checkpoint(checkpoint, cfg.net_spec())
    train = load_bundles(cfg, "train")
    holdout = load_bundles(cfg, "holdout")
    fresh = load_bundles(cfg, "finetune")
    if set(extra.get("train_ids", [])) & {b.id for b in holdout + fresh}:
        raise ValueError("checkpoint was trained on holdout or finetune scenes")
    seed = int(extra.get("seed", 0))
    net, reps = finetune_run(cfg, net, seed, train, holdout, fresh)
    d = Path(out_dir) if out_dir else Path(checkpoint).parent / "finetune"
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(d / "checkpoint.pqc", net, None, {**extra, "finetuned": True})
    write_reports(d / "eval.csv", reps)
    return d


def save_dataset(path, ds: Dataset) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))
