"""Flat ``key = value`` experiment configuration with typed parsing."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from pqclab.clone import Method, MethodConfig, RolloutSchedule
from pqclab.env import GridSpec, Task
from pqclab.nnet import DEFAULT_LAYERS, NetSpec
from pqclab.render import RenderConfig

SET_STRIDE = 100_000
SCENE_SETS = ("train", "holdout", "finetune")


@dataclass
class ExperimentConfig:
    task: str = Task.PEG_INSERTION.value
    grid: str = "desk"
    connectivity: int = 6
    clutter: int = 6
    scene_seed: int = 1_000_000
    n_train: int = 40
    n_holdout: int = 10
    n_finetune: int = 40
    # data and schedule
    episodes_per_scene: int = 25
    online_episodes: int = 1000
    cutoff_fraction: float = 0.5
    # method
    method: str = Method.BATCH_PQC.value
    penalty: float = -0.5
    relative_margin: float = 0.2
    dqfd_margin: float = 0.2
    dqfd_weight: float = 0.1
    adet_weight: float = 0.1
    batch_size: int = 64
    epochs: int = 8
    per: bool = True
    gamma: float = 0.99
    target_refresh: int = 500
    lr: float = 1e-3
    updates_per_step: float = 0.5
    explore_eps: float = 0.1
    buffer_capacity: int = 100_000
    # finetuning
    finetune_episodes: int = 400
    finetune_lr: float = 1e-4
    # observation and network
    window_half: int = 8
    resolution: int = 32
    hole_depth: float = 0.01
    dropout: float = 0.0
    net_layers: str = ",".join(DEFAULT_LAYERS)
    # evaluation and output
    seeds: str = "0,1,2"
    eval_episodes: int = 20
    eval_seed: int = 12345
    snapshots: int = 8
    sweep_counts: str = "10,40,160"
    out_dir: str = "runs"

    def __post_init__(self):
        Task(self.task)
        Method(self.method)
        if self.grid not in ("desk", "full"):
            raise ValueError(f"unknown grid preset {self.grid!r}")
        for n in (self.n_train, self.n_holdout, self.n_finetune, *self.sweep_count_list):
            if not 0 <= n < SET_STRIDE:
                raise ValueError("scene counts must lie in [0, 100000)")

    # derived views -------------------------------------------------------
    @property
    def seed_list(self) -> list[int]:
        return [int(s) for s in self.seeds.split(",") if s.strip()]

    @property
    def sweep_count_list(self) -> list[int]:
        return [int(s) for s in self.sweep_counts.split(",") if s.strip()]

    def grid_spec(self) -> GridSpec:
        g = GridSpec.desk() if self.grid == "desk" else GridSpec.full()
        return dataclasses.replace(g, connectivity=self.connectivity)

    def render_config(self) -> RenderConfig:
        return RenderConfig(self.window_half, self.resolution, self.hole_depth, self.dropout)

    def net_spec(self) -> NetSpec:
        layers = tuple(s.strip() for s in self.net_layers.split(",") if s.strip())
        return NetSpec((2, self.resolution, self.resolution), layers,
                       self.grid_spec().n_actions)

    def method_config(self, method=None, lr=None) -> MethodConfig:
        return MethodConfig(
            method=Method(method or self.method), penalty=self.penalty,
            relative_margin=self.relative_margin, dqfd_margin=self.dqfd_margin,
            dqfd_weight=self.dqfd_weight, adet_weight=self.adet_weight,
            batch_size=self.batch_size, epochs=self.epochs, per=self.per, gamma=self.gamma,
            target_refresh=self.target_refresh, lr=self.lr if lr is None else lr,
            updates_per_step=self.updates_per_step, buffer_capacity=self.buffer_capacity,
            explore_eps=self.explore_eps)

    def schedule(self, episodes: int | None = None) -> RolloutSchedule:
        n = self.online_episodes if episodes is None else episodes
        return RolloutSchedule(cutoff=max(1, int(round(self.cutoff_fraction * n))))

    def scene_seeds(self, which: str, count: int | None = None) -> list[int]:
        """Seeds of a scene set; sets occupy disjoint seed ranges."""
        k = SCENE_SETS.index(which)
        n = getattr(self, f"n_{which}") if count is None else count
        return [self.scene_seed + k * SET_STRIDE + i for i in range(n)]


def _parse(text: str, typ: str):
    if typ == "bool":
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if typ == "int":
        return int(text)
    if typ == "float":
        return float(text)
    return text.strip()


def field_types() -> dict[str, str]:
    return {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    types = field_types()
    values = dataclasses.asdict(base or ExperimentConfig())
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse(val, types[key])
    return ExperimentConfig(**values)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base)


def _render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Every field, defaults included, one per line."""
    return "".join(f"{f.name} = {_render_value(getattr(cfg, f.name))}\n"
                   for f in fields(ExperimentConfig))


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return dataclasses.replace(cfg, **kw)
