"""Egocentric orthographic depth observations and per-scene observation caches.

Channel 0 is a top-down depth map of the (2k+1) x (2k+1)-cell window centered
on the gripper column. Channel 1 shows the grasped object's footprint shaded
with the gripper's own depth, plus a two-row band holding ``iz / nz``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from pqclab.env import Scene, Task
from pqclab.errors import FormatError, InvalidState

CACHE_MAGIC = b"PQCOBS01"
CACHE_VERSION = 1
_HEADER = struct.Struct("<8sIq7I16s")
BAND_ROWS = 2


@dataclass(frozen=True)
class RenderConfig:
    window_half: int = 8
    resolution: int = 32
    hole_depth: float = 0.01
    dropout: float = 0.0
    noise_seed: int = 0

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2, self.resolution, self.resolution)

    def fingerprint(self) -> bytes:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()[:16]


def _pixel_offsets(scene: Scene, cfg: RenderConfig) -> np.ndarray:
    """Offsets (m) of pixel centers from the window center along one axis."""
    width = (2 * cfg.window_half + 1) * scene.grid.cell_size
    return ((np.arange(cfg.resolution) + 0.5) / cfg.resolution - 0.5) * width


def _height_range(scene: Scene, cfg: RenderConfig) -> tuple[float, float]:
    _, hi = scene.grid.bounds
    return -cfg.hole_depth, float(hi[2])


def _depth_image(scene: Scene, cfg: RenderConfig, ix: int, iy: int) -> np.ndarray:
    g = scene.grid
    off = _pixel_offsets(scene, cfg)
    xs = ix * g.cell_size + off[None, :]
    ys = iy * g.cell_size + off[:, None]
    lo, hi = g.bounds
    inside = (xs >= lo[0]) & (xs <= hi[0]) & (ys >= lo[1]) & (ys <= hi[1])
    height = np.zeros((cfg.resolution, cfg.resolution))
    if scene.task is Task.PEG_INSERTION:
        r = 0.5 * scene.task_params["hole_diameter"]
        hx, hy = scene.goal[0] * g.cell_size, scene.goal[1] * g.cell_size
        in_hole = (xs - hx) ** 2 + (ys - hy) ** 2 <= r * r
        height = np.where(in_hole, -cfg.hole_depth, height)
    for box in scene.boxes:
        blo, bhi = box.lo, box.hi
        foot = (xs >= blo[0]) & (xs <= bhi[0]) & (ys >= blo[1]) & (ys <= bhi[1])
        height = np.where(foot, np.maximum(height, bhi[2]), height)
    zmin, zmax = _height_range(scene, cfg)
    depth = 1.0 - (height - zmin) / (zmax - zmin)
    return np.where(inside, np.clip(depth, 0.0, 1.0), 0.0)


def _gripper_image(scene: Scene, cfg: RenderConfig, iz: int) -> np.ndarray:
    g = scene.grid
    off = _pixel_offsets(scene, cfg)
    ox, oy = scene.task_params.get("grasp_offset", (0.0, 0.0))
    dx = off[None, :] - ox
    dy = off[:, None] - oy
    if scene.task is Task.PEG_INSERTION:
        r = 0.5 * scene.task_params["peg_diameter"]
        foot = dx ** 2 + dy ** 2 <= r * r
    else:
        h = 0.5 * scene.task_params["grasped_size"]
        foot = (np.abs(dx) <= h) & (np.abs(dy) <= h)
    zmin, zmax = _height_range(scene, cfg)
    z = (iz + 1) * g.cell_size
    img = np.where(foot, 1.0 - (z - zmin) / (zmax - zmin), 0.0)
    img[:BAND_ROWS, :] = iz / g.nz
    return img


def _apply_dropout(obs: np.ndarray, scene: Scene, cfg: RenderConfig, index: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.noise_seed, scene.id & 0x7FFFFFFF, index])
    keep = rng.random(obs.shape[1:]) >= cfg.dropout
    obs[0] = np.where(keep, obs[0], 0.0)
    return obs


def render(scene: Scene, s, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Observation (2, R, R) float32 in [0, 1] seen from cell ``s``."""
    g = scene.grid
    if not g.in_bounds(s):
        raise InvalidState(f"cell {tuple(s)} out of bounds")
    obs = np.empty(cfg.shape, dtype=np.float32)
    obs[0] = _depth_image(scene, cfg, s[0], s[1])
    obs[1] = _gripper_image(scene, cfg, s[2])
    if cfg.dropout > 0:
        obs = _apply_dropout(obs, scene, cfg, g.index(s))
    return obs


@dataclass(eq=False)
class ObservationCache:
    scene_id: int
    grid_shape: tuple[int, int, int]
    obs: np.ndarray          # (n_cells, 2, R, R) float32, flat cell order
    fingerprint: bytes

    def __len__(self) -> int:
        return len(self.obs)

    def lookup(self, cell) -> np.ndarray:
        nx, ny, nz = self.grid_shape
        return self.obs[(cell[0] * ny + cell[1]) * nz + cell[2]]

    def lookup_index(self, index) -> np.ndarray:
        return self.obs[index]


def build_cache(scene: Scene, cfg: RenderConfig = RenderConfig()) -> ObservationCache:
    """Precompute the observation of every in-bounds cell.

    Depth depends only on the column and the gripper channel only on height,
    so each is rendered once and broadcast.
    """
    g = scene.grid
    depth = np.empty((g.nx, g.ny, cfg.resolution, cfg.resolution), dtype=np.float32)
    for ix in range(g.nx):
        for iy in range(g.ny):
            depth[ix, iy] = _depth_image(scene, cfg, ix, iy)
    grip = np.stack([_gripper_image(scene, cfg, iz) for iz in range(g.nz)]).astype(np.float32)
    obs = np.empty((g.nx, g.ny, g.nz) + cfg.shape, dtype=np.float32)
    obs[:, :, :, 0] = depth[:, :, None]
    obs[:, :, :, 1] = grip[None, None]
    obs = obs.reshape((g.n_cells,) + cfg.shape)
    if cfg.dropout > 0:
        for i in range(g.n_cells):
            obs[i] = _apply_dropout(obs[i], scene, cfg, i)
    return ObservationCache(scene.id, g.shape, obs, cfg.fingerprint())


def cache_to_bytes(cache: ObservationCache) -> bytes:
    n, c, h, w = cache.obs.shape
    head = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, int(cache.scene_id), n, c, h, w,
                        *cache.grid_shape, cache.fingerprint)
    return head + np.ascontiguousarray(cache.obs, dtype="<f4").tobytes()


def _parse_header(head: bytes, expected_fingerprint: bytes | None):
    if len(head) < _HEADER.size:
        raise FormatError("cache file truncated (header)")
    magic, ver, sid, n, c, h, w, nx, ny, nz, fp = _HEADER.unpack(head[:_HEADER.size])
    if magic != CACHE_MAGIC:
        raise FormatError("bad cache magic")
    if ver != CACHE_VERSION:
        raise FormatError(f"unsupported cache version {ver}")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise FormatError("render config fingerprint mismatch")
    if n != nx * ny * nz:
        raise FormatError("cell count does not match grid dims")
    return sid, (n, c, h, w), (nx, ny, nz), fp


def cache_from_bytes(data: bytes, expected_fingerprint: bytes | None = None) -> ObservationCache:
    sid, shape, grid_shape, fp = _parse_header(data, expected_fingerprint)
    need = _HEADER.size + 4 * int(np.prod(shape))
    if len(data) != need:
        raise FormatError(f"cache payload size {len(data)} != expected {need}")
    obs = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(shape).astype(np.float32)
    return ObservationCache(sid, grid_shape, obs, fp)


def save_cache(cache: ObservationCache, path) -> None:
    with open(path, "wb") as fh:
        fh.write(cache_to_bytes(cache))


def load_cache(path, expected_fingerprint: bytes | None = None,
               mmap: bool = False) -> ObservationCache:
    """Load a cache file; ``mmap=True`` maps the payload read-only instead of copying."""
    if not mmap:
        with open(path, "rb") as fh:
            return cache_from_bytes(fh.read(), expected_fingerprint)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        fh.seek(0, 2)
        size = fh.tell()
    sid, shape, grid_shape, fp = _parse_header(head, expected_fingerprint)
    if size != _HEADER.size + 4 * int(np.prod(shape)):
        raise FormatError("cache payload size mismatch")
    obs = np.memmap(path, dtype="<f4", mode="r", offset=_HEADER.size, shape=shape)
    return ObservationCache(sid, grid_shape, obs, fp)
