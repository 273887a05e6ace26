"""The gridworld environment: episode sampling, dynamics, and pixel rendering.

An episode picks a map and a goal object (hierarchically Zipfian on the
training level), drops the agent at the map's fixed start cell, and ends when
the agent moves onto any object (reward 1 iff it was the goal) or after 100
steps. Observations are egocentric 63x63x3 RGB images: the 7x7 grid squares
around the agent at 9x9 pixels each, with the top-left square replaced by a
HUD showing the goal glyph on a light-gray background.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from zipfgrid.errors import ContractViolationError, InvalidArgumentError
from zipfgrid.glyphs import (
    AGENT_RGB,
    CELL_PIXELS,
    FLOOR_RGB,
    HUD_RGB,
    WALL_RGB,
    render_tile,
)
from zipfgrid.worldgen import DIRECTIONS, GridMap, ObjectSpec, generate_map
from zipfgrid.zipf import build_zipf, rare_tail, sample

VIEW_SQUARES = 7
VIEW_RADIUS = VIEW_SQUARES // 2
OBS_PIXELS = VIEW_SQUARES * CELL_PIXELS  # 63
EPISODE_TIMEOUT = 100
NUM_ACTIONS = len(DIRECTIONS)  # 8: N, NE, E, SE, S, SW, W, NW

MODES = ("train_zipf", "uniform_all", "rare")
LEVEL_MODES = {"zipf_2": "train_zipf", "uniform": "uniform_all", "rare": "rare"}


@dataclass(frozen=True)
class SamplingConfig:
    map_exponent: float = 2.0
    goal_exponent: float = 2.0
    mode: str = "train_zipf"
    rare_fraction: float = 0.2

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class EpisodeState:
    map: GridMap
    agent_cell: tuple[int, int]
    goal_rank: int
    goal_object: ObjectSpec
    steps_taken: int
    terminated: bool
    reward: int


class MapRenderer:
    """Cached rasterizer for one map.

    The static world is drawn once into an image padded with 3 wall-colored
    squares per side; an observation is then a 63x63 crop plus the agent
    square and the HUD overlay.
    """

    def __init__(self, grid_map: GridMap):
        self.map = grid_map
        pad = VIEW_RADIUS
        h_px = (grid_map.height + 2 * pad) * CELL_PIXELS
        w_px = (grid_map.width + 2 * pad) * CELL_PIXELS
        base = np.empty((h_px, w_px, 3), dtype=np.uint8)
        base[:, :] = WALL_RGB
        floor_tile = np.empty((CELL_PIXELS, CELL_PIXELS, 3), dtype=np.uint8)
        floor_tile[:, :] = FLOOR_RGB
        for r in range(grid_map.height):
            for c in range(grid_map.width):
                if not grid_map.walls[r, c]:
                    self._blit(base, r, c, floor_tile)
        for obj in grid_map.objects:
            tile = render_tile(obj.shape_id, obj.color_id, FLOOR_RGB)
            self._blit(base, obj.cell[0], obj.cell[1], tile)
        self._base = base
        self._hud_tiles = {
            rank: render_tile(obj.shape_id, obj.color_id, HUD_RGB)
            for rank, obj in enumerate(grid_map.objects, start=1)
        }

    @staticmethod
    def _blit(base: np.ndarray, row: int, col: int, tile: np.ndarray) -> None:
        pr = (row + VIEW_RADIUS) * CELL_PIXELS
        pc = (col + VIEW_RADIUS) * CELL_PIXELS
        base[pr:pr + CELL_PIXELS, pc:pc + CELL_PIXELS] = tile

    def observe(self, agent_cell: tuple[int, int], goal_rank: int) -> np.ndarray:
        r, c = agent_cell
        pr, pc = r * CELL_PIXELS, c * CELL_PIXELS
        obs = self._base[pr:pr + OBS_PIXELS, pc:pc + OBS_PIXELS].copy()
        mid = VIEW_RADIUS * CELL_PIXELS
        obs[mid:mid + CELL_PIXELS, mid:mid + CELL_PIXELS] = AGENT_RGB
        obs[:CELL_PIXELS, :CELL_PIXELS] = self._hud_tiles[goal_rank]
        return obs

    def full_image(self, show_agent: bool = True) -> np.ndarray:
        """Top-down render of the whole map (no padding, no HUD)."""
        lo = VIEW_RADIUS * CELL_PIXELS
        img = self._base[
            lo:lo + self.map.height * CELL_PIXELS, lo:lo + self.map.width * CELL_PIXELS
        ].copy()
        if show_agent:
            r, c = self.map.agent_start
            img[r * CELL_PIXELS:(r + 1) * CELL_PIXELS,
                c * CELL_PIXELS:(c + 1) * CELL_PIXELS] = AGENT_RGB
        return img


def render(state: EpisodeState) -> np.ndarray:
    """Pure rendering of a state to a 63x63x3 uint8 observation."""
    return MapRenderer(state.map).observe(state.agent_cell, state.goal_rank)


class ZipfGridworld:
    """One environment instance bound to a set of maps and a sampling mode."""

    def __init__(self, maps: list[GridMap], sampling: SamplingConfig):
        if not maps:
            raise InvalidArgumentError("need at least one map")
        num_objects = len(maps[0].objects)
        if any(len(m.objects) != num_objects for m in maps):
            raise InvalidArgumentError("all maps must carry the same object count")
        self.maps = list(maps)
        self.sampling = sampling
        self.num_objects = num_objects
        self._map_dist = build_zipf(len(maps), sampling.map_exponent)
        self._goal_dist = build_zipf(num_objects, sampling.goal_exponent)
        self._rare_maps = sorted(rare_tail(self._map_dist, sampling.rare_fraction))
        self._rare_goals = sorted(rare_tail(self._goal_dist, sampling.rare_fraction))
        self._renderers = [MapRenderer(m) for m in self.maps]
        self._object_cells = [m.object_cells() for m in self.maps]
        self._state: EpisodeState | None = None

    @property
    def state(self) -> EpisodeState:
        if self._state is None:
            raise ContractViolationError("reset() has not been called")
        return self._state

    def draw_ranks(
        self, rng: np.random.Generator, sampling: SamplingConfig | None = None
    ) -> tuple[int, int]:
        """(map rank, goal rank) for one episode under the sampling mode."""
        if sampling is None or sampling == self.sampling:
            map_dist, goal_dist = self._map_dist, self._goal_dist
            rare_maps, rare_goals = self._rare_maps, self._rare_goals
            mode = self.sampling.mode
        else:
            map_dist = build_zipf(len(self.maps), sampling.map_exponent)
            goal_dist = build_zipf(self.num_objects, sampling.goal_exponent)
            rare_maps = sorted(rare_tail(map_dist, sampling.rare_fraction))
            rare_goals = sorted(rare_tail(goal_dist, sampling.rare_fraction))
            mode = sampling.mode
        if mode == "train_zipf":
            return sample(map_dist, rng), sample(goal_dist, rng)
        if mode == "uniform_all":
            m = int(rng.integers(len(self.maps))) + 1
            g = int(rng.integers(self.num_objects)) + 1
            return m, g
        combo = int(rng.integers(len(rare_maps) * len(rare_goals)))
        return (
            rare_maps[combo // len(rare_goals)],
            rare_goals[combo % len(rare_goals)],
        )

    def reset(
        self, rng: np.random.Generator, sampling: SamplingConfig | None = None
    ) -> np.ndarray:
        map_rank, goal_rank = self.draw_ranks(rng, sampling)
        return self.reset_to(map_rank, goal_rank)

    def reset_to(self, map_rank: int, goal_rank: int) -> np.ndarray:
        """Start an episode on an explicit (map rank, goal rank) pair."""
        grid_map = self.maps[map_rank - 1]
        self._map_rank = map_rank
        self._state = EpisodeState(
            map=grid_map,
            agent_cell=grid_map.agent_start,
            goal_rank=goal_rank,
            goal_object=grid_map.objects[goal_rank - 1],
            steps_taken=0,
            terminated=False,
            reward=0,
        )
        return self._observe()

    def _observe(self) -> np.ndarray:
        s = self.state
        return self._renderers[self._map_rank - 1].observe(s.agent_cell, s.goal_rank)

    def step(self, action: int) -> tuple[np.ndarray, int, bool]:
        if not 0 <= action < NUM_ACTIONS:
            raise InvalidArgumentError(f"action must be in [0, {NUM_ACTIONS}), got {action}")
        s = self.state
        if s.terminated:
            raise ContractViolationError("step() called after episode termination")
        grid_map = s.map
        dr, dc = DIRECTIONS[action]
        nr, nc = s.agent_cell[0] + dr, s.agent_cell[1] + dc
        steps = s.steps_taken + 1
        blocked = (
            not (0 <= nr < grid_map.height and 0 <= nc < grid_map.width)
            or grid_map.walls[nr, nc]
        )
        if blocked:
            nr, nc = s.agent_cell
        hit = self._object_cells[self._map_rank - 1].get((nr, nc))
        if hit is not None:
            reward = int(hit + 1 == s.goal_rank)
            self._state = replace(
                s, agent_cell=(nr, nc), steps_taken=steps, terminated=True, reward=reward
            )
            return self._observe(), reward, True
        terminated = steps >= EPISODE_TIMEOUT
        self._state = replace(
            s, agent_cell=(nr, nc), steps_taken=steps, terminated=terminated, reward=0
        )
        return self._observe(), 0, terminated


def build_level(
    level_name: str,
    maps: list[GridMap],
    goal_exponent: float | None = None,
    rare_fraction: float = 0.2,
) -> ZipfGridworld:
    """Environment for a named level split: ``zipf_2``, ``uniform`` or ``rare``.

    Names of the form ``zipf_<x>`` select Zipfian training with exponent x
    for both the map and goal choices (goal exponent overridable).
    """
    if level_name in LEVEL_MODES:
        mode = LEVEL_MODES[level_name]
        map_exp = 2.0
    elif level_name.startswith("zipf_"):
        mode = "train_zipf"
        try:
            map_exp = float(level_name.removeprefix("zipf_"))
        except ValueError:
            raise InvalidArgumentError(f"unknown level name {level_name!r}") from None
    else:
        raise InvalidArgumentError(f"unknown level name {level_name!r}")
    sampling = SamplingConfig(
        map_exponent=map_exp,
        goal_exponent=map_exp if goal_exponent is None else goal_exponent,
        mode=mode,
        rare_fraction=rare_fraction,
    )
    return ZipfGridworld(maps, sampling)


def generate_world(global_seed: int, num_maps: int = 20, num_objects: int = 20) -> list[GridMap]:
    """The fixed map set shared by all level splits of one world."""
    return [generate_map(global_seed, i, num_objects) for i in range(num_maps)]


def optimal_path_length(grid_map: GridMap, goal_rank: int) -> int:
    """Fewest actions to touch the goal object from the start cell (BFS)."""
    return len(bfs_action_path(grid_map, goal_rank))


def bfs_action_path(grid_map: GridMap, goal_rank: int) -> list[int]:
    """A shortest action sequence whose last action moves onto the goal.

    Intermediate cells are free (non-wall, non-object); walls never cut the
    path because diagonal moves only check the destination cell, matching
    ``step``.
    """
    if not 1 <= goal_rank <= len(grid_map.objects):
        raise InvalidArgumentError(f"goal_rank {goal_rank} out of range")
    goal_cell = grid_map.objects[goal_rank - 1].cell
    free = grid_map.free_mask()
    start = grid_map.agent_start
    prev: dict[tuple[int, int], tuple[tuple[int, int], int]] = {}
    queue: deque[tuple[int, int]] = deque([start])
    seen = {start}
    target: tuple[int, int] | None = None
    while queue:
        cell = queue.popleft()
        if max(abs(cell[0] - goal_cell[0]), abs(cell[1] - goal_cell[1])) == 1:
            target = cell
            break
        for action, (dr, dc) in enumerate(DIRECTIONS):
            nxt = (cell[0] + dr, cell[1] + dc)
            if (
                0 <= nxt[0] < grid_map.height
                and 0 <= nxt[1] < grid_map.width
                and free[nxt]
                and nxt not in seen
            ):
                seen.add(nxt)
                prev[nxt] = (cell, action)
                queue.append(nxt)
    if target is None:
        raise InvalidArgumentError(
            f"goal rank {goal_rank} unreachable on map {grid_map.map_id}"
        )
    actions = [DIRECTIONS.index((goal_cell[0] - target[0], goal_cell[1] - target[1]))]
    cell = target
    while cell != start:
        cell, action = prev[cell]
        actions.append(action)
    actions.reverse()
    return actions


def map_to_ascii(grid_map: GridMap) -> str:
    """Human-readable dump: ``#`` wall, ``.`` floor, ``A`` start, a..z objects."""
    rows = [
        ["#" if grid_map.walls[r, c] else "." for c in range(grid_map.width)]
        for r in range(grid_map.height)
    ]
    for i, obj in enumerate(grid_map.objects):
        rows[obj.cell[0]][obj.cell[1]] = chr(ord("a") + i)
    rows[grid_map.agent_start[0]][grid_map.agent_start[1]] = "A"
    return "\n".join("".join(row) for row in rows)


def map_manifest(grid_map: GridMap) -> dict:
    """JSON-ready description of a map (objects in rank order)."""
    from zipfgrid.glyphs import COLORS, SHAPES

    return {
        "map_id": grid_map.map_id,
        "height": grid_map.height,
        "width": grid_map.width,
        "agent_start": list(grid_map.agent_start),
        "rooms": [list(r) for r in grid_map.rooms],
        "objects": [
            {
                "rank": i + 1,
                "color": COLORS[obj.color_id],
                "shape": SHAPES[obj.shape_id],
                "color_id": obj.color_id,
                "shape_id": obj.shape_id,
                "cell": list(obj.cell),
            }
            for i, obj in enumerate(grid_map.objects)
        ],
    }
