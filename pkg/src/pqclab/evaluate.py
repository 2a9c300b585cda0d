"""Greedy-policy evaluation with paired start states."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from pqclab.clone import SceneBundle, masked_argmax
from pqclab.env import Terminal, start_cells
from pqclab.errors import FormatError
from pqclab.nnet import QNetwork

EPISODES_PER_SCENE = 20

# policy(bundle, cell_indices) -> action indices
Policy = Callable[[SceneBundle, np.ndarray], np.ndarray]


@dataclass
class SceneResult:
    scene_id: int
    episodes: int
    goals: int
    collisions: int
    timeouts: int
    steps_to_goal: float  # mean over successful episodes, nan if none


@dataclass
class EvalReport:
    episodes: int = 0
    goals: int = 0
    collisions: int = 0
    timeouts: int = 0
    mean_steps: float = float("nan")
    per_scene: list = field(default_factory=list)
    tag: str = ""

    @property
    def success_rate(self) -> float:
        return self.goals / self.episodes if self.episodes else 0.0

    @property
    def collision_rate(self) -> float:
        return self.collisions / self.episodes if self.episodes else 0.0

    @property
    def timeout_rate(self) -> float:
        return self.timeouts / self.episodes if self.episodes else 0.0

    def summary(self) -> dict:
        return {"tag": self.tag, "episodes": self.episodes, "success_rate": self.success_rate,
                "collision_rate": self.collision_rate, "timeout_rate": self.timeout_rate,
                "mean_steps": self.mean_steps}


def greedy_policy(net: QNetwork) -> Policy:
    def act(bundle: SceneBundle, cells: np.ndarray) -> np.ndarray:
        q = net.forward(bundle.cache.obs[cells])
        return masked_argmax(q, bundle.scene.transitions[cells] >= 0)
    return act


def expert_policy(bundle: SceneBundle, cells: np.ndarray) -> np.ndarray:
    return bundle.expert.expert_action[cells].astype(np.int64)


def random_policy(seed: int = 0) -> Policy:
    rng = np.random.default_rng(seed)

    def act(bundle: SceneBundle, cells: np.ndarray) -> np.ndarray:
        feas = bundle.scene.transitions[cells] >= 0
        return masked_argmax(rng.random(feas.shape), feas)
    return act


def eval_starts(bundle: SceneBundle, episodes: int, seed: int) -> np.ndarray:
    """Start cells drawn from a stream keyed on (seed, scene id), so runs are paired."""
    rng = np.random.default_rng([seed, bundle.id & 0x7FFFFFFF])
    cells = start_cells(bundle.scene)
    return cells[rng.integers(len(cells), size=episodes)]


NONE, GOAL, COLLISION, TIMEOUT = range(4)
OUTCOME_NAMES = (Terminal.NONE, Terminal.GOAL, Terminal.COLLISION, Terminal.TIMEOUT)


def rollout_batch(bundle: SceneBundle, policy: Policy, starts: np.ndarray):
    """Run every episode in lockstep.

    Returns ``(outcomes, steps)`` with outcome codes indexing ``OUTCOME_NAMES``.
    """
    scene = bundle.scene
    horizon = scene.grid.horizon
    v = np.asarray(starts, dtype=np.int64).copy()
    n = len(v)
    outcome = np.full(n, NONE, dtype=np.int8)
    steps = np.zeros(n, dtype=np.int64)
    live = np.ones(n, dtype=bool)
    for t in range(horizon):
        idx = np.flatnonzero(live)
        if len(idx) == 0:
            break
        a = np.asarray(policy(bundle, v[idx]))
        dest = scene.transitions[v[idx], a]
        hit = dest < 0
        outcome[idx[hit]] = COLLISION
        steps[idx[hit]] = t + 1
        live[idx[hit]] = False
        ok = idx[~hit]
        v[ok] = dest[~hit]
        steps[ok] = t + 1
        goal = scene.goal_mask[v[ok]]
        outcome[ok[goal]] = GOAL
        live[ok[goal]] = False
    outcome[live] = TIMEOUT
    return outcome, steps


def evaluate(policy: Policy, bundles: Sequence[SceneBundle],
             episodes_per_scene: int = EPISODES_PER_SCENE, seed: int = 0, tag: str = "") -> EvalReport:
    rep = EvalReport(tag=tag)
    goal_steps = []
    for b in bundles:
        out, steps = rollout_batch(b, policy, eval_starts(b, episodes_per_scene, seed))
        g = out == GOAL
        c = out == COLLISION
        tmo = out == TIMEOUT
        rep.per_scene.append(SceneResult(b.id, len(out), int(g.sum()), int(c.sum()), int(tmo.sum()),
                                         float(steps[g].mean()) if g.any() else float("nan")))
        rep.episodes += len(out)
        rep.goals += int(g.sum())
        rep.collisions += int(c.sum())
        rep.timeouts += int(tmo.sum())
        goal_steps.extend(steps[g].tolist())
    rep.mean_steps = float(np.mean(goal_steps)) if goal_steps else float("nan")
    return rep


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if x != x else repr(round(x, 10))
    return str(x)


REPORT_COLUMNS = ("tag", "scene_id", "episodes", "goals", "collisions", "timeouts",
                  "success_rate", "collision_rate", "timeout_rate", "mean_steps")


def report_rows(rep: EvalReport) -> list[list[str]]:
    rows = [[rep.tag, "all", rep.episodes, rep.goals, rep.collisions, rep.timeouts,
             rep.success_rate, rep.collision_rate, rep.timeout_rate, rep.mean_steps]]
    for s in rep.per_scene:
        n = s.episodes
        rows.append([rep.tag, s.scene_id, n, s.goals, s.collisions, s.timeouts,
                     s.goals / n, s.collisions / n, s.timeouts / n, s.steps_to_goal])
    return [[_fmt(x) for x in r] for r in rows]


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for rep in reports:
        w.writerows(report_rows(rep))
    return buf.getvalue()


def write_reports(path, reports: Sequence[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(reports_to_csv(reports))


def read_reports(path) -> list[EvalReport]:
    """Rebuild reports from the CSV written by :func:`write_reports`."""
    out: dict[str, EvalReport] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(REPORT_COLUMNS):
            raise FormatError(f"{path}: unexpected header {reader.fieldnames}")
        for lineno, row in enumerate(reader, 2):
            try:
                _read_row(out, row)
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return list(out.values())


def _read_row(out: dict, row: dict) -> None:
    rep = out.setdefault(row["tag"], EvalReport(tag=row["tag"]))
    counts = (int(row["episodes"]), int(row["goals"]), int(row["collisions"]), int(row["timeouts"]))
    if row["scene_id"] == "all":
        rep.episodes, rep.goals, rep.collisions, rep.timeouts = counts
        rep.mean_steps = float(row["mean_steps"])
    else:
        rep.per_scene.append(SceneResult(int(row["scene_id"]), *counts, float(row["mean_steps"])))
