"""Penalized Q cloning, its ablations, and the DAGGER / DQN-family baselines.

Experiences are stored columnar in a NumPy structured array (``EXP_DTYPE``);
:class:`Experience` is the record-level view.
"""
from __future__ import annotations

import enum
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from pqclab.env import Scene, Terminal, edge_cost, is_goal, sample_start, start_cells
from pqclab.errors import (EmptyBuffer, FormatError, InfeasibleState, PenaltyInvalid,
                           SceneUnsolved)
from pqclab.nnet import (LossKind, LossTargets, OptimState, QNetwork, loss_and_grad, loss_terms,
                         opt_step)
from pqclab.planner import ExpertSolution, expert_rollout
from pqclab.render import ObservationCache
from pqclab.replay import PERBuffer

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    BATCH_PQC = "BatchPQC"
    ONLINE_PQC = "OnlinePQC"
    ONLINE_PQC_NO_PENALTY = "OnlinePQC_NoPenalty"
    ONLINE_PQC_ONE_ACTION = "OnlinePQC_OneAction"
    ONLINE_PQC_RELATIVE = "OnlinePQC_RelativePenalty"
    DAGGER = "DAGGER"
    DQFD_DAGGER = "DQfD_Dagger"
    ADET = "ADET"
    DQN_ON_POLICY = "DQN_OnPolicy"
    DQN_DAGGER = "DQN_Dagger"
    FINETUNE_DQN = "Finetune_DQN"


PQC_METHODS = {Method.BATCH_PQC, Method.ONLINE_PQC, Method.ONLINE_PQC_NO_PENALTY,
               Method.ONLINE_PQC_ONE_ACTION, Method.ONLINE_PQC_RELATIVE}
TD_METHODS = {Method.DQFD_DAGGER, Method.ADET, Method.DQN_ON_POLICY, Method.DQN_DAGGER,
              Method.FINETUNE_DQN}


class Kind(enum.IntEnum):
    SUPERVISED_Q = 0
    EXPERT_LABEL = 1
    TD = 2


EXP_DTYPE = np.dtype([
    ("scene", "<i8"), ("cell", "<i4"), ("action", "<i2"), ("kind", "i1"),
    ("q", "<f8"), ("expert", "<i2"), ("reward", "<f8"), ("next_cell", "<i4"),
    ("terminal", "i1"), ("priority", "<f8"),
])


@dataclass(frozen=True)
class Experience:
    scene: int
    cell: int
    action: int
    kind: Kind
    q: float = 0.0
    expert: int = -1
    reward: float = 0.0
    next_cell: int = -1
    terminal: bool = False
    priority: float = 1.0

    @classmethod
    def from_row(cls, row) -> "Experience":
        return cls(int(row["scene"]), int(row["cell"]), int(row["action"]), Kind(int(row["kind"])),
                   float(row["q"]), int(row["expert"]), float(row["reward"]),
                   int(row["next_cell"]), bool(row["terminal"]), float(row["priority"]))

    def to_row(self) -> np.ndarray:
        return np.array([(self.scene, self.cell, self.action, int(self.kind), self.q, self.expert,
                          self.reward, self.next_cell, int(self.terminal), self.priority)],
                        dtype=EXP_DTYPE)[0]


@dataclass
class MethodConfig:
    method: Method = Method.BATCH_PQC
    penalty: float = -0.5
    relative_margin: float = 0.2
    dqfd_margin: float = 0.2
    dqfd_weight: float = 0.1
    adet_weight: float = 0.1
    batch_size: int = 64
    epochs: int = 8
    per: bool = True
    per_alpha: float = 0.6
    per_eps: float = 1e-3
    per_beta0: float = 0.4
    per_beta1: float = 1.0
    gamma: float = 0.99
    target_refresh: int = 500
    lr: float = 1e-3
    updates_per_step: float = 0.5
    buffer_capacity: int = 100_000
    explore_eps: float = 0.1

    def __post_init__(self):
        self.method = Method(self.method)
        if self.relative_margin <= 0 or self.dqfd_margin <= 0:
            raise ValueError("margins must be positive")


@dataclass(frozen=True)
class SceneBundle:
    """Everything training needs about one scene."""
    scene: Scene
    cache: ObservationCache
    expert: ExpertSolution

    @property
    def id(self) -> int:
        return self.scene.id


# ------------------------------------------------------------------- schedule

@dataclass(frozen=True)
class RolloutSchedule:
    """DAGGER-like mixing: expert and random shares decay together to zero at ``cutoff``."""
    cutoff: int
    expert_frac0: float = 0.8
    random_frac0: float = 0.2
    floor: float = 0.01  # mixing weight reached at the cutoff episode

    @property
    def decay_rate(self) -> float:
        return math.log(1.0 / self.floor) / self.cutoff if self.cutoff > 0 else math.inf

    def fractions(self, episode: int) -> tuple[float, float, float]:
        if self.cutoff <= 0 or episode >= self.cutoff:
            return 0.0, 0.0, 1.0
        f = math.exp(-self.decay_rate * episode)
        fe, fr = self.expert_frac0 * f, self.random_frac0 * f
        return fe, fr, max(0.0, 1.0 - fe - fr)


class Behavior(enum.IntEnum):
    EXPERT = 0
    RANDOM = 1
    GREEDY = 2


# ------------------------------------------------------------------- policies

def masked_argmax(q: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    q = np.where(feasible, q, -np.inf)
    return q.argmax(axis=1)


def gather_obs(by_id: dict, scene_ids, cells) -> np.ndarray:
    first = next(iter(by_id.values())).cache.obs
    out = np.empty((len(cells),) + first.shape[1:], dtype=np.float32)
    for i, (sid, c) in enumerate(zip(scene_ids, cells)):
        out[i] = by_id[int(sid)].cache.obs[int(c)]
    return out


def feasible_rows(by_id: dict, scene_ids, cells) -> np.ndarray:
    return np.stack([by_id[int(s)].scene.transitions[int(c)] >= 0
                     for s, c in zip(scene_ids, cells)])


# ------------------------------------------------------------------- targets

def validate_penalty(c: float, bundles: Sequence[SceneBundle]) -> float:
    """Require ``c`` strictly below every expert value over the start distribution."""
    worst = -min_expert_value(bundles)
    if not c < -worst:
        raise PenaltyInvalid(f"penalty c={c} is not below min expert value {-worst}")
    return -worst


def min_expert_value(bundles: Sequence[SceneBundle]) -> float:
    worst = 0.0
    for b in bundles:
        st = start_cells(b.scene)
        if len(st):
            ctg = b.expert.cost_to_go[st]
            if not np.isfinite(ctg).all():
                raise SceneUnsolved(f"scene {b.id} has unreachable starts")
            worst = max(worst, float(ctg.max()))
    return -worst


def _pqc_mode(method: Method) -> str:
    return {Method.BATCH_PQC: "fixed", Method.ONLINE_PQC: "fixed",
            Method.ONLINE_PQC_NO_PENALTY: "none", Method.ONLINE_PQC_ONE_ACTION: "one",
            Method.ONLINE_PQC_RELATIVE: "relative"}[method]


def make_targets(method, cfg: MethodConfig, bundle: SceneBundle, transitions) -> np.ndarray:
    """Supervision for visited states.

    ``transitions`` rows carry ``cell``, ``action`` (executed), ``reward``,
    ``next_cell`` and ``terminal``; the expert labels every visited state no
    matter which policy acted.
    """
    method = Method(method)
    sol = bundle.expert
    nbr = sol.graph.nbr
    out = []
    for tr in transitions:
        v = int(tr["cell"])
        a_exec = int(tr["action"])
        a_e = int(sol.expert_action[v])
        if a_e < 0:
            raise InfeasibleState(f"expert undefined at cell {v} of scene {bundle.id}")
        base = dict(scene=bundle.id, cell=v, expert=a_e, reward=float(tr["reward"]),
                    next_cell=int(tr["next_cell"]), terminal=bool(tr["terminal"]))
        if method in PQC_METHODS:
            mode = _pqc_mode(method)
            q_row = sol.q_table[v]
            if mode == "one":
                if nbr[v, a_exec] >= 0:
                    out.append(Experience(action=a_exec, kind=Kind.SUPERVISED_Q,
                                          q=float(q_row[a_exec]), **base))
                continue
            q_exp = float(q_row[a_e])
            for a in np.flatnonzero(nbr[v] >= 0):
                a = int(a)
                if a == a_e:
                    q = q_exp
                elif mode == "fixed":
                    # off-distribution states can sit below c; keep the penalty under the expert
                    q = cfg.penalty if q_exp > cfg.penalty else q_exp - cfg.relative_margin
                elif mode == "relative":
                    q = float(q_row[a]) - cfg.relative_margin
                else:
                    q = float(q_row[a])
                out.append(Experience(action=a, kind=Kind.SUPERVISED_Q, q=q, **base))
        elif method is Method.DAGGER:
            out.append(Experience(action=a_e, kind=Kind.EXPERT_LABEL, **base))
        else:
            out.append(Experience(action=a_exec, kind=Kind.TD, **base))
    if not out:
        return np.zeros(0, dtype=EXP_DTYPE)
    return np.array([tuple(e.to_row()) for e in out], dtype=EXP_DTYPE)


TRANSITION_DTYPE = np.dtype([("cell", "<i4"), ("action", "<i2"), ("behavior", "i1"),
                             ("reward", "<f8"), ("next_cell", "<i4"), ("terminal", "i1"),
                             ("outcome", "i1")])
OUTCOMES = [Terminal.NONE, Terminal.GOAL, Terminal.COLLISION, Terminal.TIMEOUT]


def expert_episode(bundle: SceneBundle, start) -> np.ndarray:
    """Transitions of one expert rollout from ``start``."""
    scene = bundle.scene
    g = scene.grid
    path = expert_rollout(bundle.expert, start)
    rows = []
    for t, (s, s1) in enumerate(zip(path[:-1], path[1:])):
        v, v1 = g.index(s), g.index(s1)
        a = int(bundle.expert.expert_action[v])
        goal = is_goal(scene, s1)
        outcome = Terminal.GOAL if goal else (Terminal.TIMEOUT if t + 1 >= g.horizon else Terminal.NONE)
        rows.append((v, a, Behavior.EXPERT, -edge_cost(scene, a, v1), v1, int(goal),
                     OUTCOMES.index(outcome)))
        if outcome is Terminal.TIMEOUT:
            break
    return np.array(rows, dtype=TRANSITION_DTYPE)


# ------------------------------------------------------------------- dataset

@dataclass
class Dataset:
    records: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def experiences(self) -> list[Experience]:
        return [Experience.from_row(r) for r in self.records]


DATA_MAGIC = b"PQCDATA1"
DATA_VERSION = 1
_DATA_HEAD = struct.Struct("<8sII")


def dataset_to_bytes(ds: Dataset) -> bytes:
    header = json.dumps({"provenance": ds.provenance, "n": len(ds.records),
                         "dtype": EXP_DTYPE.descr}, sort_keys=True).encode()
    return (_DATA_HEAD.pack(DATA_MAGIC, DATA_VERSION, len(header)) + header
            + np.ascontiguousarray(ds.records, dtype=EXP_DTYPE).tobytes())


def dataset_from_bytes(data: bytes) -> Dataset:
    if len(data) < _DATA_HEAD.size:
        raise FormatError("dataset truncated")
    magic, ver, hlen = _DATA_HEAD.unpack(data[:_DATA_HEAD.size])
    if magic != DATA_MAGIC or ver != DATA_VERSION:
        raise FormatError("bad dataset magic/version")
    header = json.loads(data[_DATA_HEAD.size:_DATA_HEAD.size + hlen])
    off = _DATA_HEAD.size + hlen
    n = int(header["n"])
    if len(data) != off + n * EXP_DTYPE.itemsize:
        raise FormatError("dataset payload size mismatch")
    recs = np.frombuffer(data, dtype=EXP_DTYPE, count=n, offset=off).copy()
    return Dataset(recs, header["provenance"])


def generate_batch_dataset(bundles: Sequence[SceneBundle], episodes_per_scene: int,
                           cfg: MethodConfig, rng: np.random.Generator,
                           method=Method.BATCH_PQC) -> Dataset:
    """Expert rollouts from random starts, augmented with targets for every feasible action."""
    method = Method(method)
    if _pqc_mode(method) == "fixed":
        validate_penalty(cfg.penalty, bundles)
    chunks = []
    for b in bundles:
        if not np.isfinite(b.expert.cost_to_go).any():
            raise SceneUnsolved(f"scene {b.id} has no solution")
        for _ in range(episodes_per_scene):
            ep = expert_episode(b, sample_start(b.scene, rng))
            chunks.append(make_targets(method, cfg, b, ep))
    recs = np.concatenate(chunks) if chunks else np.zeros(0, dtype=EXP_DTYPE)
    recs["priority"] = 1.0
    if _pqc_mode(method) == "fixed" and len(recs):
        expert_q = recs["q"][recs["action"] == recs["expert"]]
        assert cfg.penalty < expert_q.min(), "penalty must stay below every expert target"
    prov = {"method": method.value, "scenes": [int(b.id) for b in bundles],
            "episodes_per_scene": int(episodes_per_scene), "penalty": cfg.penalty,
            "relative_margin": cfg.relative_margin}
    return Dataset(recs, prov)


# ------------------------------------------------------------------- training

def _value_targets(recs, n_actions):
    b = len(recs)
    values = np.zeros((b, n_actions))
    mask = np.zeros((b, n_actions), dtype=bool)
    rows = np.arange(b)
    values[rows, recs["action"]] = recs["q"]
    mask[rows, recs["action"]] = True
    return values, mask


@dataclass
class TrainResult:
    net: QNetwork
    optim: OptimState
    loss_curve: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    steps: int = 0


def train_batch_pqc(net: QNetwork, dataset: Dataset, bundles: Sequence[SceneBundle],
                    cfg: MethodConfig, rng: np.random.Generator, optim: OptimState | None = None,
                    epochs: int | None = None, on_epoch: Callable | None = None,
                    snapshots_per_epoch: int = 1) -> TrainResult:
    """Minibatch Huber regression of Q(z, a) onto the dataset targets."""
    recs = dataset.records
    if len(recs) == 0:
        raise ValueError("dataset is empty")
    epochs = cfg.epochs if epochs is None else epochs
    by_id = {b.id: b for b in bundles}
    # compact bank of the distinct observations referenced by the dataset
    keys = recs["scene"].astype(np.int64) * (1 << 32) + recs["cell"]
    uniq, inv = np.unique(keys, return_inverse=True)
    bank = gather_obs(by_id, uniq >> 32, uniq & 0xFFFFFFFF)
    values, mask = _value_targets(recs, net.spec.n_outputs)
    optim = optim or OptimState(net.n_params, lr=cfg.lr)
    n = len(recs)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total = steps_per_epoch * epochs
    buf = None
    if cfg.per:
        buf = PERBuffer(n, np.dtype("<i8"), cfg.per_alpha, cfg.per_eps, cfg.per_beta0,
                        cfg.per_beta1)
        buf.add(np.arange(n))
    res = TrainResult(net, optim)
    marks = {int(round(steps_per_epoch * (k + 1) / snapshots_per_epoch))
             for k in range(snapshots_per_epoch)}
    step = 0
    for epoch in range(epochs):
        order = None if buf is not None else rng.permutation(n)
        losses = []
        for k in range(steps_per_epoch):
            if buf is not None:
                idx, w, slots = buf.sample(cfg.batch_size, rng, buf.beta(step / max(total - 1, 1)))
            else:
                idx = order[k * cfg.batch_size:(k + 1) * cfg.batch_size]
                w = None
            t = LossTargets(values=values[idx], mask=mask[idx])
            loss, grad, per = loss_and_grad(net, bank[inv[idx]], t, LossKind.HUBER,
                                            is_weights=w)
            opt_step(net, optim, grad)
            if buf is not None:
                buf.update_priorities(slots, per)
            losses.append(float(per.mean()))
            step += 1
            if on_epoch is not None and (k + 1) in marks and (k + 1) != steps_per_epoch:
                res.snapshots.append(on_epoch(epoch + (k + 1) / steps_per_epoch, step,
                                                float(np.mean(losses))))
        res.loss_curve.append(float(np.mean(losses)))
        if on_epoch is not None:
            res.snapshots.append(on_epoch(epoch + 1.0, step, res.loss_curve[-1]))
    res.steps = step
    return res


def dataset_loss(net: QNetwork, dataset: Dataset, bundles: Sequence[SceneBundle],
                 chunk: int = 512) -> float:
    """Mean unweighted Huber loss over every record."""
    by_id = {b.id: b for b in bundles}
    recs = dataset.records
    total = 0.0
    for lo in range(0, len(recs), chunk):
        r = recs[lo:lo + chunk]
        values, mask = _value_targets(r, net.spec.n_outputs)
        q = net.forward(gather_obs(by_id, r["scene"], r["cell"]))
        per, _ = loss_terms(q, LossTargets(values, mask), LossKind.HUBER)
        total += float(per.sum())
    return total / len(recs)


def rollout_online(schedule: RolloutSchedule, episode: int, net: QNetwork | None,
                   bundle: SceneBundle, rng: np.random.Generator, start=None,
                   explore_eps: float = 0.0) -> np.ndarray:
    """One episode acting with the expert, a uniform random policy or the greedy net.

    The behavior is drawn per step from the schedule's mixture at ``episode``.
    Random and greedy choices are restricted to feasible actions.
    """
    scene = bundle.scene
    g = scene.grid
    fe, fr, _ = schedule.fractions(episode)
    s = sample_start(scene, rng) if start is None else start
    v = g.index(s)
    rows = []
    for t in range(g.horizon):
        feas = scene.transitions[v] >= 0
        u = rng.random()
        if u < fe:
            beh, a = Behavior.EXPERT, int(bundle.expert.expert_action[v])
        elif u < fe + fr or net is None:
            beh, a = Behavior.RANDOM, int(rng.choice(np.flatnonzero(feas)))
        elif explore_eps > 0 and rng.random() < explore_eps:
            beh, a = Behavior.GREEDY, int(rng.choice(np.flatnonzero(feas)))
        else:
            q = net.forward(bundle.cache.obs[v][None])
            beh, a = Behavior.GREEDY, int(masked_argmax(q, feas[None])[0])
        v1 = int(scene.transitions[v, a])
        reward = -edge_cost(scene, a, v1)
        if scene.goal_mask[v1]:
            outcome = Terminal.GOAL
        elif t + 1 >= g.horizon:
            outcome = Terminal.TIMEOUT
        else:
            outcome = Terminal.NONE
        rows.append((v, a, beh, reward, v1, int(outcome is Terminal.GOAL), OUTCOMES.index(outcome)))
        v = v1
        if outcome is not Terminal.NONE:
            break
    return np.array(rows, dtype=TRANSITION_DTYPE)


def td_targets(target_net: QNetwork, next_obs, rewards, terminal, next_feasible,
               gamma: float) -> np.ndarray:
    """``r`` at terminal transitions, else ``r + gamma * max_a' Q_target(z', a')`` (feasible a')."""
    rewards = np.asarray(rewards, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    out = rewards.copy()
    live = ~terminal
    if live.any() and gamma != 0.0:
        q = target_net.forward(next_obs[live])
        q = np.where(next_feasible[live], q, -np.inf).max(axis=1)
        out[live] = rewards[live] + gamma * q
    return out


def td_target(target_net: QNetwork, exp: Experience, bundle: SceneBundle, gamma: float) -> float:
    nxt = bundle.cache.obs[exp.next_cell][None]
    feas = (bundle.scene.transitions[exp.next_cell] >= 0)[None]
    return float(td_targets(target_net, nxt, [exp.reward], [exp.terminal], feas, gamma)[0])


def _online_loss_spec(method: Method, cfg: MethodConfig):
    if method in PQC_METHODS:
        return LossKind.HUBER, None
    if method is Method.DAGGER:
        return LossKind.CROSS_ENTROPY, None
    if method is Method.DQFD_DAGGER:
        return LossKind.COMPOSITE, {"huber": 1.0, "margin": cfg.dqfd_weight}
    if method is Method.ADET:
        return LossKind.COMPOSITE, {"huber": 1.0, "cross_entropy": cfg.adet_weight}
    return LossKind.HUBER, None


def batch_loss_inputs(method: Method, cfg: MethodConfig, recs, by_id, target_net, n_actions):
    """Observations and loss targets for a sampled minibatch of records."""
    obs = gather_obs(by_id, recs["scene"], recs["cell"])
    if method in PQC_METHODS:
        values, mask = _value_targets(recs, n_actions)
        return obs, LossTargets(values=values, mask=mask)
    if method is Method.DAGGER:
        return obs, LossTargets(expert=recs["expert"].astype(np.int64))
    nxt = gather_obs(by_id, recs["scene"], recs["next_cell"])
    feas = feasible_rows(by_id, recs["scene"], recs["next_cell"])
    y = td_targets(target_net, nxt, recs["reward"], recs["terminal"].astype(bool), feas, cfg.gamma)
    rows = np.arange(len(recs))
    values = np.zeros((len(recs), n_actions))
    mask = np.zeros((len(recs), n_actions), dtype=bool)
    values[rows, recs["action"]] = y
    mask[rows, recs["action"]] = True
    return obs, LossTargets(values=values, mask=mask, expert=recs["expert"].astype(np.int64))


def train_online(cfg: MethodConfig, schedule: RolloutSchedule, bundles: Sequence[SceneBundle],
                 episodes: int, rng: np.random.Generator, net: QNetwork,
                 optim: OptimState | None = None, on_snapshot: Callable | None = None,
                 snapshot_every: int = 0) -> TrainResult:
    """Per episode: roll out, label, insert into replay, then take minibatch steps."""
    method = cfg.method
    if method in PQC_METHODS and _pqc_mode(method) == "fixed":
        validate_penalty(cfg.penalty, bundles)
    by_id = {b.id: b for b in bundles}
    kind, terms = _online_loss_spec(method, cfg)
    optim = optim or OptimState(net.n_params, lr=cfg.lr)
    alpha = cfg.per_alpha if cfg.per else 0.0
    buf = PERBuffer(cfg.buffer_capacity, EXP_DTYPE, alpha, cfg.per_eps, cfg.per_beta0, cfg.per_beta1)
    target = net.copy() if method in TD_METHODS else None
    res = TrainResult(net, optim)
    explore = cfg.explore_eps if method in TD_METHODS else 0.0
    step = 0
    losses: list[float] = []
    for ep in range(episodes):
        b = bundles[int(rng.integers(len(bundles)))]
        trans = rollout_online(schedule, ep, net, b, rng, explore_eps=explore)
        recs = make_targets(method, cfg, b, trans)
        if len(recs):
            buf.add(recs)
        n_updates = max(1, int(round(cfg.updates_per_step * len(trans))))
        for _ in range(n_updates):
            if len(buf) == 0:
                break
            batch, w, slots = buf.sample(cfg.batch_size, rng, buf.beta(ep / max(episodes - 1, 1)))
            obs, tgt = batch_loss_inputs(method, cfg, batch, by_id, target, net.spec.n_outputs)
            loss, grad, per = loss_and_grad(net, obs, tgt, kind, terms=terms,
                                            is_weights=w if cfg.per else None,
                                            margin=cfg.dqfd_margin)
            opt_step(net, optim, grad)
            if cfg.per:
                buf.update_priorities(slots, per)
            losses.append(loss)
            step += 1
            if target is not None and step % cfg.target_refresh == 0:
                target.set_params(net.params)
        if (ep + 1) % max(1, episodes // 10) == 0 or ep + 1 == episodes:
            res.loss_curve.append(float(np.mean(losses)) if losses else float("nan"))
        if snapshot_every and on_snapshot is not None and (ep + 1) % snapshot_every == 0:
            recent = float(np.mean(losses)) if losses else float("nan")
            res.snapshots.append(on_snapshot(ep + 1, step, recent))
        if (ep + 1) % max(1, episodes // 10) == 0:
            losses = []
    res.steps = step
    return res


def finetune_dqn(net: QNetwork, bundles: Sequence[SceneBundle], schedule: RolloutSchedule,
                 episodes: int, cfg: MethodConfig, rng: np.random.Generator,
                 **kw) -> TrainResult:
    """Standard DQN on fresh scenes, starting from a cloned network."""
    cfg = MethodConfig(**{**asdict(cfg), "method": Method.FINETUNE_DQN})
    if episodes <= 0:
        return TrainResult(net, OptimState(net.n_params, lr=cfg.lr))
    return train_online(cfg, schedule, bundles, episodes, rng, net, **kw)
