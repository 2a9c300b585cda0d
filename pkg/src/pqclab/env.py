"""Gridworld visual-servo MDP: scene sampling, kinematics, clearance and reward.

World frame: the table surface is the plane z = 0. Cell ``(ix, iy, iz)`` has
its center at ``(ix, iy, iz + 1) * cell_size``, so the lowest layer hovers one
cell above the table. Clutter and blocks are axis-aligned boxes standing on
the table.
"""
from __future__ import annotations

import enum
import functools
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from pqclab.errors import InvalidState, SceneInfeasible

PENALTY_RADIUS = 0.02  # meters; clearance beyond this costs nothing
GOAL_RADIUS_M = 0.01
MAX_SAMPLE_ATTEMPTS = 100


class Task(str, enum.Enum):
    PEG_INSERTION = "PegInsertion"
    BLOCK_STACKING = "BlockStacking"


class Terminal(str, enum.Enum):
    NONE = "None"
    GOAL = "Goal"
    COLLISION = "Collision"
    TIMEOUT = "Timeout"


class Cell(NamedTuple):
    ix: int
    iy: int
    iz: int


@dataclass(frozen=True)
class GridSpec:
    nx: int = 11
    ny: int = 11
    nz: int = 7
    cell_size: float = 0.01
    connectivity: int = 6

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1 or self.nx * self.ny * self.nz < 8:
            raise ValueError(f"grid too small: {self.nx}x{self.ny}x{self.nz}")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.connectivity not in (6, 26):
            raise ValueError("connectivity must be 6 or 26")

    @classmethod
    def full(cls) -> "GridSpec":
        return cls(21, 21, 12, 0.01)

    @classmethod
    def desk(cls) -> "GridSpec":
        return cls(11, 11, 7, 0.01)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def horizon(self) -> int:
        return 4 * (self.nx + self.ny + self.nz)

    @property
    def goal_radius(self) -> int:
        """Goal tolerance in cells (Chebyshev)."""
        return max(0, int(math.floor(GOAL_RADIUS_M / self.cell_size + 1e-9)))

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """World-space (lo, hi) corners of the volume spanned by the cells."""
        cs = self.cell_size
        lo = np.array([-0.5 * cs, -0.5 * cs, 0.0])
        hi = np.array([(self.nx - 0.5) * cs, (self.ny - 0.5) * cs, (self.nz + 0.5) * cs])
        return lo, hi

    def in_bounds(self, c) -> bool:
        return 0 <= c[0] < self.nx and 0 <= c[1] < self.ny and 0 <= c[2] < self.nz

    def index(self, c) -> int:
        return (c[0] * self.ny + c[1]) * self.nz + c[2]

    def cell(self, index: int) -> Cell:
        index = int(index)
        iz = index % self.nz
        iy = (index // self.nz) % self.ny
        return Cell(index // (self.ny * self.nz), iy, iz)

    def center(self, c) -> np.ndarray:
        cs = self.cell_size
        return np.array([c[0] * cs, c[1] * cs, (c[2] + 1) * cs])

    def all_centers(self) -> np.ndarray:
        """(n_cells, 3) world centers in flat-index order."""
        ix, iy, iz = np.meshgrid(np.arange(self.nx), np.arange(self.ny),
                                 np.arange(self.nz), indexing="ij")
        cs = self.cell_size
        return np.stack([ix.ravel() * cs, iy.ravel() * cs, (iz.ravel() + 1) * cs], axis=1)

    @functools.cached_property
    def displacements(self) -> np.ndarray:
        """Integer action displacements; the action set is the same for every state."""
        if self.connectivity == 6:
            return np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0],
                             [0, 0, 1], [0, 0, -1]], dtype=np.int64)
        offs = [d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)]
        return np.array(offs, dtype=np.int64)

    @property
    def n_actions(self) -> int:
        return len(self.displacements)

    @functools.cached_property
    def action_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.displacements, axis=1) * self.cell_size

    @functools.cached_property
    def opposite_actions(self) -> np.ndarray:
        d = self.displacements
        return np.array([int(np.flatnonzero((d == -row).all(axis=1))[0]) for row in d],
                        dtype=np.int32)


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ValueError("half_extents must be strictly positive")

    @property
    def lo(self) -> np.ndarray:
        return np.subtract(self.center, self.half_extents)

    @property
    def hi(self) -> np.ndarray:
        return np.add(self.center, self.half_extents)

    @property
    def top(self) -> float:
        return self.center[2] + self.half_extents[2]


@dataclass(frozen=True, eq=False)
class Scene:
    id: int
    task: Task
    grid: GridSpec
    obstacles: tuple[Obstacle, ...]
    goal: Cell
    task_params: dict = field(default_factory=dict)
    rng_seed: int = 0

    def __eq__(self, other):
        return isinstance(other, Scene) and self.to_record() == other.to_record()

    def __hash__(self):
        return hash(self.to_record())

    @property
    def blocks(self) -> tuple[Obstacle, ...]:
        return tuple(Obstacle(tuple(b["center"]), tuple(b["half_extents"]))
                     for b in self.task_params.get("blocks", ()))

    @property
    def boxes(self) -> tuple[Obstacle, ...]:
        """Every solid box: clutter plus any scene blocks."""
        return tuple(self.obstacles) + self.blocks

    @functools.cached_property
    def clearance_grid(self) -> np.ndarray:
        """Clearance of every cell center, flat-index order."""
        return _clearance_points(self, self.grid.all_centers())

    @functools.cached_property
    def occupied(self) -> np.ndarray:
        """Boolean flat array: cell center inside (or on) some box."""
        pts = self.grid.all_centers()
        occ = np.zeros(len(pts), dtype=bool)
        for box in self.boxes:
            occ |= np.all((pts >= box.lo) & (pts <= box.hi), axis=1)
        return occ

    @functools.cached_property
    def transitions(self) -> np.ndarray:
        """(n_cells, n_actions) destination flat index, -1 if blocked or out of bounds."""
        g = self.grid
        ix, iy, iz = np.meshgrid(np.arange(g.nx), np.arange(g.ny), np.arange(g.nz),
                                 indexing="ij")
        coords = np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1)
        out = np.full((g.n_cells, g.n_actions), -1, dtype=np.int32)
        for a, d in enumerate(g.displacements):
            dest = coords + d
            ok = ((dest >= 0) & (dest < np.array(g.shape))).all(axis=1)
            flat = (dest[:, 0] * g.ny + dest[:, 1]) * g.nz + dest[:, 2]
            ok[ok] &= ~self.occupied[flat[ok]]
            out[ok, a] = flat[ok]
        out[self.occupied] = -1
        return out

    @functools.cached_property
    def goal_mask(self) -> np.ndarray:
        g = self.grid
        r = g.goal_radius
        ix, iy, iz = np.meshgrid(np.arange(g.nx), np.arange(g.ny), np.arange(g.nz),
                                 indexing="ij")
        cheb = np.maximum(np.maximum(abs(ix - self.goal[0]), abs(iy - self.goal[1])),
                          abs(iz - self.goal[2]))
        return (cheb <= r).ravel()

    def feasible(self, s) -> np.ndarray:
        """Boolean mask of actions whose destination is free and in bounds."""
        return self.transitions[self.grid.index(s)] >= 0

    def to_record(self) -> str:
        """Single-line text record with a fixed field order."""
        rec = {
            "id": int(self.id),
            "task": self.task.value,
            "grid": [self.grid.nx, self.grid.ny, self.grid.nz, _f9(self.grid.cell_size),
                     self.grid.connectivity],
            "obstacles": [[[_f9(v) for v in o.center], [_f9(v) for v in o.half_extents]]
                          for o in self.obstacles],
            "goal": [int(v) for v in self.goal],
            "task_params": _round_tree(self.task_params),
            "rng_seed": int(self.rng_seed),
        }
        return json.dumps(rec, separators=(",", ":"))

    @classmethod
    def from_record(cls, line: str) -> "Scene":
        rec = json.loads(line)
        nx, ny, nz, cs, conn = rec["grid"]
        return cls(
            id=int(rec["id"]),
            task=Task(rec["task"]),
            grid=GridSpec(int(nx), int(ny), int(nz), float(cs), int(conn)),
            obstacles=tuple(Obstacle(tuple(c), tuple(h)) for c, h in rec["obstacles"]),
            goal=Cell(*rec["goal"]),
            task_params=rec["task_params"],
            rng_seed=int(rec["rng_seed"]),
        )


def _f9(x: float) -> float:
    return float(f"{float(x):.9g}")


def _round_tree(obj):
    if isinstance(obj, float):
        return _f9(obj)
    if isinstance(obj, dict):
        return {k: _round_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_tree(v) for v in obj]
    return obj


def write_scenes(path, scenes) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sc in scenes:
            fh.write(sc.to_record() + "\n")


def read_scenes(path) -> list[Scene]:
    with open(path, encoding="utf-8") as fh:
        return [Scene.from_record(line) for line in fh if line.strip()]


# --------------------------------------------------------------------- geometry

def point_box_distance(points: np.ndarray, box: Obstacle) -> np.ndarray:
    """Euclidean distance from each point to the box surface, 0 inside."""
    d = np.abs(np.asarray(points, dtype=float) - np.asarray(box.center)) - np.asarray(box.half_extents)
    return np.sqrt(np.sum(np.maximum(d, 0.0) ** 2, axis=-1))


def _clearance_points(scene: Scene, points: np.ndarray) -> np.ndarray:
    lo, hi = scene.grid.bounds
    cap = float(np.linalg.norm(hi - lo))
    out = np.full(len(points), cap)
    for box in scene.boxes:
        out = np.minimum(out, point_box_distance(points, box))
    return out


def clearance(scene: Scene, cell) -> float:
    """Distance (m) from the cell center to the nearest box surface.

    Returns 0 inside an obstacle and the grid diagonal when the scene is empty.
    """
    if not scene.grid.in_bounds(cell):
        raise InvalidState(f"cell {tuple(cell)} out of bounds")
    return float(scene.clearance_grid[scene.grid.index(cell)])


def proximity_penalty(d):
    """Zero beyond 2 cm of clearance, rising linearly to 1 at contact."""
    d = np.asarray(d, dtype=float)
    out = np.where(d >= PENALTY_RADIUS, 0.0, 1.0 - d / PENALTY_RADIUS)
    return float(out) if out.ndim == 0 else out


def is_goal(scene: Scene, s) -> bool:
    r = scene.grid.goal_radius
    g = scene.goal
    return max(abs(s[0] - g[0]), abs(s[1] - g[1]), abs(s[2] - g[2])) <= r


# --------------------------------------------------------------------- dynamics

@dataclass(frozen=True)
class StepResult:
    next: Cell
    reward: float
    terminal: Terminal


def edge_cost(scene: Scene, a: int, dest_index: int) -> float:
    """Cost of moving along action ``a`` into the cell ``dest_index``."""
    g = scene.grid
    return float(g.action_lengths[a] + proximity_penalty(scene.clearance_grid[dest_index]))


def step(scene: Scene, s, a: int, t: int) -> StepResult:
    g = scene.grid
    if not g.in_bounds(s) or scene.occupied[g.index(s)]:
        raise InvalidState(f"cell {tuple(s)} is out of bounds or occupied")
    if not 0 <= a < g.n_actions:
        raise InvalidState(f"action {a} out of range")
    s = Cell(*(int(v) for v in s))
    dest = scene.transitions[g.index(s), a]
    if dest < 0:
        # blocked destination is charged as contact: clearance 0
        return StepResult(s, -float(g.action_lengths[a] + 1.0), Terminal.COLLISION)
    nxt = g.cell(dest)
    reward = -edge_cost(scene, a, dest)
    if is_goal(scene, nxt):
        term = Terminal.GOAL
    elif t + 1 >= g.horizon:
        term = Terminal.TIMEOUT
    else:
        term = Terminal.NONE
    return StepResult(nxt, reward, term)


def reachable_mask(scene: Scene) -> np.ndarray:
    """Flood fill over free cells from the goal region (moves are reversible)."""
    trans = scene.transitions
    seen = scene.goal_mask & ~scene.occupied
    queue = deque(np.flatnonzero(seen).tolist())
    while queue:
        v = queue.popleft()
        for u in trans[v]:
            if u >= 0 and not seen[u]:
                seen[u] = True
                queue.append(int(u))
    return seen


def start_cells(scene: Scene) -> np.ndarray:
    """Support of the start distribution.

    Reachable, penalty-free (clearance >= 2 cm) cells outside the goal region.
    """
    ok = reachable_mask(scene) & ~scene.goal_mask
    ok &= scene.clearance_grid >= PENALTY_RADIUS
    return np.flatnonzero(ok)


def sample_start(scene: Scene, rng: np.random.Generator) -> Cell:
    starts = start_cells(scene)
    return scene.grid.cell(starts[rng.integers(len(starts))])


# --------------------------------------------------------------------- sampling

def sample_scene(task, grid: GridSpec, clutter_count: int, seed: int,
                 scene_id: int | None = None, max_attempts: int = MAX_SAMPLE_ATTEMPTS) -> Scene:
    """Sample a random scene; identical arguments give an identical scene.

    Candidates are resampled until the goal region is free and at least half
    of the free cells can reach it.
    """
    task = Task(task)
    if clutter_count < 0:
        raise ValueError("clutter_count must be >= 0")
    rng = np.random.default_rng(seed)
    sid = seed if scene_id is None else scene_id
    for _ in range(max_attempts):
        scene = _sample_candidate(task, grid, clutter_count, rng, sid, seed)
        if scene is None:
            continue
        free = ~scene.occupied
        if scene.occupied[grid.index(scene.goal)] or (scene.goal_mask & scene.occupied).any():
            continue
        reach = reachable_mask(scene)
        if len(start_cells(scene)) and reach.sum() >= 0.5 * free.sum():
            return scene
    raise SceneInfeasible(f"no feasible scene after {max_attempts} attempts (seed={seed})")


def _goal_xy(grid: GridSpec, rng) -> tuple[int, int]:
    def pick(n):
        lo = int(math.ceil(0.2 * (n - 1)))
        hi = int(math.floor(0.8 * (n - 1)))
        return int(rng.integers(lo, hi + 1)) if hi >= lo else (n - 1) // 2
    return pick(grid.nx), pick(grid.ny)


def _box_on_table(grid: GridSpec, rng, half_xy: tuple[float, float], height: float,
                  center_xy=None) -> Obstacle:
    lo, hi = grid.bounds
    hx, hy = half_xy
    if center_xy is None:
        cx = rng.uniform(lo[0] + hx, hi[0] - hx)
        cy = rng.uniform(lo[1] + hy, hi[1] - hy)
    else:
        cx, cy = center_xy
    return Obstacle((_f9(cx), _f9(cy), _f9(height / 2)), (_f9(hx), _f9(hy), _f9(height / 2)))


def _keeps_goal_clear(grid: GridSpec, goal: Cell, box: Obstacle) -> bool:
    """Box leaves the goal region free and the goal cell penalty-free."""
    r = grid.goal_radius
    g = np.array(goal)
    for off in itertools.product(range(-r, r + 1), repeat=3):
        c = g + off
        if grid.in_bounds(c):
            p = grid.center(c)
            if np.all((p >= box.lo) & (p <= box.hi)):
                return False
    return float(point_box_distance(grid.center(goal)[None], box)[0]) >= PENALTY_RADIUS


def _sample_candidate(task: Task, grid: GridSpec, clutter_count: int, rng, sid: int, seed: int):
    cs = grid.cell_size
    _, hi = grid.bounds
    z_top = hi[2]
    gx, gy = _goal_xy(grid, rng)
    params: dict = {}
    blocks: list[Obstacle] = []
    if task is Task.PEG_INSERTION:
        hole = rng.uniform(0.8, 1.6) * cs
        peg = hole * rng.uniform(0.5, 0.9)
        params = {
            "hole_diameter": _f9(hole),
            "peg_diameter": _f9(peg),
            "grasp_offset": [_f9(v) for v in rng.uniform(-0.2, 0.2, size=2) * cs],
        }
        goal = Cell(gx, gy, 0)
    else:
        grasped = rng.uniform(1.2, 2.0) * cs
        target = grasped * rng.uniform(0.96, 1.04)
        goal_iz = int(math.ceil((target + PENALTY_RADIUS) / cs - 1 - 1e-9))
        if goal_iz >= grid.nz:
            return None
        goal = Cell(gx, gy, goal_iz)
        blocks.append(_box_on_table(grid, rng, (target / 2, target / 2), target,
                                    center_xy=(gx * cs, gy * cs)))
        for _ in range(2):
            for _try in range(50):
                e = rng.uniform(0.8, 3.0) * cs
                if abs(e / grasped - 1.0) < 0.25:
                    continue
                box = _box_on_table(grid, rng, (e / 2, e / 2), e)
                if _keeps_goal_clear(grid, goal, box) and _separated(box, blocks):
                    blocks.append(box)
                    break
            else:
                return None
        params = {
            "grasped_size": _f9(grasped),
            "grasp_offset": [_f9(v) for v in rng.uniform(-0.2, 0.2, size=2) * cs],
            "blocks": [{"center": list(b.center), "half_extents": list(b.half_extents)}
                       for b in blocks],
            "target_block": 0,
        }
    clutter: list[Obstacle] = []
    for _ in range(clutter_count):
        for _try in range(50):
            hx, hy = rng.uniform(0.5, 1.5, size=2) * cs
            h = rng.uniform(1.0, 0.6 * z_top / cs) * cs
            box = _box_on_table(grid, rng, (hx, hy), h)
            if _keeps_goal_clear(grid, goal, box) and _separated(box, blocks):
                clutter.append(box)
                break
        else:
            return None
    return Scene(id=int(sid), task=task, grid=grid, obstacles=tuple(clutter), goal=goal,
                 task_params=params, rng_seed=int(seed))


def _separated(box: Obstacle, others) -> bool:
    """Clutter may not overlap scene blocks (keeps block footprints visible)."""
    for o in others:
        if np.all(box.lo[:2] < o.hi[:2]) and np.all(o.lo[:2] < box.hi[:2]):
            return False
    return True


def matching_blocks(scene: Scene, rel_tol: float = 0.10) -> list[int]:
    """Indices of scene blocks whose edge matches the grasped block within ``rel_tol``."""
    g = scene.task_params["grasped_size"]
    return [i for i, b in enumerate(scene.blocks)
            if abs(2 * b.half_extents[0] / g - 1.0) <= rel_tol]
