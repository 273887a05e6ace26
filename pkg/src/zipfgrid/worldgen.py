"""Deterministic map generation.

A map is a 3x3 arrangement of rooms (7x7 interior cells each) separated by
one-cell walls, one doorway per shared wall, giving a 25x25 grid. Objects and
the agent start cell are placed on free cells and re-drawn until a flood fill
confirms that every free cell stays reachable and every object can be touched.
Generation is a pure function of ``(global_seed, map_id)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from zipfgrid.errors import GenerationError, InvalidArgumentError
from zipfgrid.glyphs import COLORS, SHAPES
from zipfgrid.seeding import stream

ROOMS_PER_SIDE = 3
ROOM_INTERIOR = 7
MAX_PLACEMENT_ATTEMPTS = 10_000

# 8-connected neighborhood, fixed action order: N, NE, E, SE, S, SW, W, NW.
DIRECTIONS: tuple[tuple[int, int], ...] = (
    (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1),
)


@dataclass(frozen=True)
class ObjectSpec:
    color_id: int
    shape_id: int
    cell: tuple[int, int]


@dataclass(frozen=True)
class GridMap:
    map_id: int
    height: int
    width: int
    walls: np.ndarray                       # bool (height, width)
    rooms: tuple[tuple[int, int, int, int], ...]  # (row, col, h, w) interiors
    objects: tuple[ObjectSpec, ...]         # rank order, rank 1 first
    agent_start: tuple[int, int]

    def object_cells(self) -> dict[tuple[int, int], int]:
        """Cell -> 0-based object index."""
        return {obj.cell: i for i, obj in enumerate(self.objects)}

    def free_mask(self) -> np.ndarray:
        """True where a cell is neither wall nor object."""
        free = ~self.walls
        for obj in self.objects:
            free[obj.cell] = False
        return free


def _build_walls(rng: np.random.Generator) -> np.ndarray:
    pitch = ROOM_INTERIOR + 1
    side = ROOMS_PER_SIDE * pitch + 1
    walls = np.zeros((side, side), dtype=bool)
    walls[::pitch, :] = True
    walls[:, ::pitch] = True
    # one doorway per internal shared wall; position drawn along the segment
    for j in range(1, ROOMS_PER_SIDE):          # vertical walls
        for i in range(ROOMS_PER_SIDE):
            row = i * pitch + 1 + int(rng.integers(ROOM_INTERIOR))
            walls[row, j * pitch] = False
    for i in range(1, ROOMS_PER_SIDE):          # horizontal walls
        for j in range(ROOMS_PER_SIDE):
            col = j * pitch + 1 + int(rng.integers(ROOM_INTERIOR))
            walls[i * pitch, col] = False
    return walls


def flood_from(
    start: tuple[int, int], passable: np.ndarray
) -> np.ndarray:
    """8-directional flood fill; returns the reached mask."""
    height, width = passable.shape
    reached = np.zeros_like(passable)
    if not passable[start]:
        return reached
    reached[start] = True
    frontier = [start]
    while frontier:
        r, c = frontier.pop()
        for dr, dc in DIRECTIONS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < height and 0 <= nc < width and passable[nr, nc] and not reached[nr, nc]:
                reached[nr, nc] = True
                frontier.append((nr, nc))
    return reached


def _placement_valid(walls: np.ndarray, start: tuple[int, int],
                     object_cells: list[tuple[int, int]]) -> bool:
    passable = ~walls
    for cell in object_cells:
        passable[cell] = False
    reached = flood_from(start, passable)
    if reached.sum() != passable.sum():
        return False
    height, width = walls.shape
    for r, c in object_cells:
        touchable = any(
            0 <= r + dr < height and 0 <= c + dc < width and reached[r + dr, c + dc]
            for dr, dc in DIRECTIONS
        )
        if not touchable:
            return False
    return True


def generate_map(global_seed: int, map_id: int, num_objects: int = 20) -> GridMap:
    """Generate the map with the given id, deterministically per seed."""
    if map_id < 0:
        raise InvalidArgumentError(f"map_id must be >= 0, got {map_id}")
    if num_objects < 1:
        raise InvalidArgumentError(f"num_objects must be >= 1, got {num_objects}")
    rng = stream(global_seed, "world", map_id)
    pitch = ROOM_INTERIOR + 1
    side = ROOMS_PER_SIDE * pitch + 1
    rooms = tuple(
        (i * pitch + 1, j * pitch + 1, ROOM_INTERIOR, ROOM_INTERIOR)
        for i in range(ROOMS_PER_SIDE)
        for j in range(ROOMS_PER_SIDE)
    )

    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        walls = _build_walls(rng)
        free = np.argwhere(~walls)
        picks = rng.choice(len(free), size=num_objects + 1, replace=False)
        start = tuple(int(v) for v in free[picks[0]])
        object_cells = [tuple(int(v) for v in free[p]) for p in picks[1:]]
        if not _placement_valid(walls, start, object_cells):
            continue
        # distinct (color, shape) pairs from the 15 x 15 product, rank order
        pair_ids = rng.choice(len(COLORS) * len(SHAPES), size=num_objects, replace=False)
        objects = tuple(
            ObjectSpec(color_id=int(p) // len(SHAPES), shape_id=int(p) % len(SHAPES), cell=cell)
            for p, cell in zip(pair_ids, object_cells)
        )
        walls.setflags(write=False)
        return GridMap(
            map_id=map_id, height=side, width=side, walls=walls,
            rooms=rooms, objects=objects, agent_start=start,
        )
    raise GenerationError(
        f"map {map_id}: no valid placement after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )
