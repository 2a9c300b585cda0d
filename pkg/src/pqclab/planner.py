"""Full-state expert: Dijkstra over the free-cell grid graph.

Edge cost is the Euclidean move length plus the proximity penalty of the
destination cell, which is exactly the magnitude of the environment reward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pqclab import kernels
from pqclab.env import Cell, Scene, proximity_penalty
from pqclab.errors import InfeasibleAction, InvalidState, NoFeasibleAction


@dataclass(frozen=True, eq=False)
class PlanGraph:
    scene: Scene
    vertices: np.ndarray   # bool per flat cell: collision-free
    nbr: np.ndarray        # (n_cells, n_actions) destination or -1
    cost: np.ndarray       # (n_cells, n_actions) edge cost, inf where nbr == -1

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.sum())

    @property
    def n_edges(self) -> int:
        return int((self.nbr >= 0).sum())


@dataclass(frozen=True, eq=False)
class ExpertSolution:
    graph: PlanGraph
    cost_to_go: np.ndarray      # inf for unreachable / occupied
    expert_action: np.ndarray   # -1 at goal region and unreachable cells
    q_table: np.ndarray         # (n_cells, n_actions) Q_E, -inf where infeasible

    @property
    def scene(self) -> Scene:
        return self.graph.scene

    def cost(self, s) -> float:
        return float(self.cost_to_go[self.scene.grid.index(s)])


def build_graph(scene: Scene) -> PlanGraph:
    g = scene.grid
    nbr = scene.transitions.copy()
    pen = proximity_penalty(scene.clearance_grid)
    cost = np.full(nbr.shape, np.inf)
    ok = nbr >= 0
    lengths = np.broadcast_to(g.action_lengths, nbr.shape)
    cost[ok] = lengths[ok] + pen[nbr[ok]]
    return PlanGraph(scene, ~scene.occupied, nbr, cost)


def solve(graph: PlanGraph, goal_region=None) -> ExpertSolution:
    """Multi-source Dijkstra from the goal region over reversed edges."""
    scene = graph.scene
    g = scene.grid
    if goal_region is None:
        sources = np.flatnonzero(scene.goal_mask & graph.vertices)
    else:
        sources = np.array([g.index(c) for c in goal_region], dtype=np.int64)
    if len(sources) == 0 or not graph.vertices[sources].all():
        raise InvalidState("goal region must be non-empty and collision-free")
    ctg = kernels.dijkstra(graph.nbr, graph.cost, g.opposite_actions, sources.astype(np.int32))
    return _finish(graph, ctg, sources)


def _finish(graph: PlanGraph, ctg: np.ndarray, sources) -> ExpertSolution:
    nbr = graph.nbr
    safe = np.where(nbr >= 0, nbr, 0)
    totals = np.where(nbr >= 0, graph.cost + ctg[safe], np.inf)
    q = -totals
    act = np.argmin(totals, axis=1).astype(np.int32)  # first minimum = lowest action index
    undefined = ~np.isfinite(ctg) | ~np.isfinite(totals.min(axis=1))
    undefined[sources] = True
    act[undefined] = -1
    return ExpertSolution(graph, ctg, act, q)


def expert_q(sol: ExpertSolution, s, a: int) -> float:
    g = sol.scene.grid
    v = g.index(s)
    if not np.isfinite(sol.cost_to_go[v]):
        raise InvalidState(f"cell {tuple(s)} is not reachable")
    if sol.graph.nbr[v, a] < 0:
        raise InfeasibleAction(f"action {a} from {tuple(s)} is blocked")
    return float(sol.q_table[v, a])


def expert_policy(sol: ExpertSolution, s) -> int:
    g = sol.scene.grid
    v = g.index(s)
    if not (sol.graph.nbr[v] >= 0).any():
        raise NoFeasibleAction(f"no free neighbor at {tuple(s)}")
    a = int(sol.expert_action[v])
    if a < 0:
        raise InvalidState(f"expert undefined at {tuple(s)} (goal region or unreachable)")
    return a


def expert_rollout(sol: ExpertSolution, start) -> list[Cell]:
    """Cells visited by following the expert from ``start`` into the goal region."""
    scene = sol.scene
    g = scene.grid
    path = [Cell(*start)]
    v = g.index(start)
    for _ in range(g.n_cells):
        if scene.goal_mask[v]:
            return path
        a = sol.expert_action[v]
        if a < 0:
            raise InvalidState(f"expert undefined at {tuple(g.cell(v))}")
        v = int(sol.graph.nbr[v, a])
        path.append(g.cell(v))
    raise RuntimeError("expert rollout did not terminate")


def min_edge_cost(graph: PlanGraph) -> float:
    return float(graph.cost[np.isfinite(graph.cost)].min())


def max_steps_bound(sol: ExpertSolution, s) -> int:
    return int(math.ceil(sol.cost(s) / min_edge_cost(sol.graph) - 1e-12))


def value_iteration(graph: PlanGraph, tol: float = 1e-12, max_iter: int = 100000) -> np.ndarray:
    """Tabular undiscounted value iteration; an independent oracle for :func:`solve`."""
    scene = graph.scene
    n = len(graph.vertices)
    v = np.full(n, np.inf)
    goal = scene.goal_mask & graph.vertices
    v[goal] = 0.0
    nbr = graph.nbr
    safe = np.where(nbr >= 0, nbr, 0)
    for _ in range(max_iter):
        cand = np.where(nbr >= 0, graph.cost + v[safe], np.inf).min(axis=1)
        new = np.where(goal, 0.0, cand)
        new[~graph.vertices] = np.inf
        both = np.isfinite(new) & np.isfinite(v)
        delta = np.abs(new[both] - v[both]).max(initial=0.0)
        changed = (np.isfinite(new) != np.isfinite(v)).any()
        v = new
        if not changed and delta < tol:
            break
    return v


def dump_cost_to_go(sol: ExpertSolution, path) -> None:
    """Text dump, one line per cell: ``ix iy iz cost``."""
    g = sol.scene.grid
    with open(path, "w", encoding="utf-8") as fh:
        for i, c in enumerate(sol.cost_to_go):
            ix, iy, iz = g.cell(i)
            fh.write(f"{ix} {iy} {iz} {float(c)!r}\n")


def load_cost_to_go(path, grid) -> np.ndarray:
    out = np.full(grid.n_cells, np.inf)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            ix, iy, iz, c = line.split()
            out[grid.index((int(ix), int(iy), int(iz)))] = float(c)
    return out


def solve_scene(scene: Scene) -> ExpertSolution:
    return solve(build_graph(scene))
