"""Color palette and shape stencils for object rendering.

Each object is a 9x9-pixel glyph: a fixed binary stencil (one per shape name)
filled with one of 15 palette colors, drawn over a background color. Stencils
are written as string art so the exact pixels are pinned and reviewable.
"""

from __future__ import annotations

import numpy as np

CELL_PIXELS = 9

FLOOR_RGB = (40, 40, 40)
WALL_RGB = (0, 0, 0)
AGENT_RGB = (255, 255, 255)
HUD_RGB = (200, 200, 200)

COLORS: list[str] = [
    "red", "green", "blue", "purple", "orange",
    "yellow", "brown", "pink", "cyan", "dark_green",
    "dark_red", "dark_blue", "teal", "lavender", "rose",
]

COLOR_RGB: dict[str, tuple[int, int, int]] = {
    "red": (255, 0, 0),
    "green": (0, 200, 0),
    "blue": (0, 0, 255),
    "purple": (128, 0, 128),
    "orange": (255, 165, 0),
    "yellow": (255, 255, 0),
    "brown": (139, 69, 19),
    "pink": (255, 105, 180),
    "cyan": (0, 255, 255),
    "dark_green": (0, 100, 0),
    "dark_red": (139, 0, 0),
    "dark_blue": (0, 0, 139),
    "teal": (0, 128, 128),
    "lavender": (230, 230, 250),
    "rose": (255, 0, 127),
}

SHAPES: list[str] = [
    "triangle", "empty_square", "plus", "inverse_plus", "ex",
    "inverse_ex", "circle", "empty_circle", "tee", "upside_down_tee",
    "h", "u", "upside_down_u", "vertical_stripes", "horizontal_stripes",
]

_STENCIL_ART: dict[str, list[str]] = {
    "triangle": [
        ".........",
        "....#....",
        "...###...",
        "...###...",
        "..#####..",
        "..#####..",
        ".#######.",
        ".#######.",
        ".........",
    ],
    "empty_square": [
        ".........",
        ".#######.",
        ".#.....#.",
        ".#.....#.",
        ".#.....#.",
        ".#.....#.",
        ".#.....#.",
        ".#######.",
        ".........",
    ],
    "plus": [
        ".........",
        "...###...",
        "...###...",
        ".#######.",
        ".#######.",
        ".#######.",
        "...###...",
        "...###...",
        ".........",
    ],
    "inverse_plus": [
        ".........",
        ".##...##.",
        ".##...##.",
        ".........",
        ".........",
        ".........",
        ".##...##.",
        ".##...##.",
        ".........",
    ],
    "ex": [
        ".........",
        ".##...##.",
        ".###.###.",
        "..#####..",
        "...###...",
        "..#####..",
        ".###.###.",
        ".##...##.",
        ".........",
    ],
    "inverse_ex": [
        ".........",
        "...###...",
        "....#....",
        ".#.....#.",
        ".##...##.",
        ".#.....#.",
        "....#....",
        "...###...",
        ".........",
    ],
    "circle": [
        ".........",
        "...###...",
        "..#####..",
        ".#######.",
        ".#######.",
        ".#######.",
        "..#####..",
        "...###...",
        ".........",
    ],
    "empty_circle": [
        ".........",
        "...###...",
        "..#...#..",
        ".#.....#.",
        ".#.....#.",
        ".#.....#.",
        "..#...#..",
        "...###...",
        ".........",
    ],
    "tee": [
        ".........",
        ".#######.",
        ".#######.",
        "...###...",
        "...###...",
        "...###...",
        "...###...",
        "...###...",
        ".........",
    ],
    "upside_down_tee": [
        ".........",
        "...###...",
        "...###...",
        "...###...",
        "...###...",
        "...###...",
        ".#######.",
        ".#######.",
        ".........",
    ],
    "h": [
        ".........",
        ".##...##.",
        ".##...##.",
        ".##...##.",
        ".#######.",
        ".##...##.",
        ".##...##.",
        ".##...##.",
        ".........",
    ],
    "u": [
        ".........",
        ".##...##.",
        ".##...##.",
        ".##...##.",
        ".##...##.",
        ".##...##.",
        ".#######.",
        ".#######.",
        ".........",
    ],
    "upside_down_u": [
        ".........",
        ".#######.",
        ".#######.",
        ".##...##.",
        ".##...##.",
        ".##...##.",
        ".##...##.",
        ".##...##.",
        ".........",
    ],
    "vertical_stripes": [
        ".........",
        ".#.#.#.#.",
        ".#.#.#.#.",
        ".#.#.#.#.",
        ".#.#.#.#.",
        ".#.#.#.#.",
        ".#.#.#.#.",
        ".#.#.#.#.",
        ".........",
    ],
    "horizontal_stripes": [
        ".........",
        ".#######.",
        ".........",
        ".#######.",
        ".........",
        ".#######.",
        ".........",
        ".#######.",
        ".........",
    ],
}


def _parse(art: list[str]) -> np.ndarray:
    grid = np.array([[ch == "#" for ch in row] for row in art], dtype=bool)
    assert grid.shape == (CELL_PIXELS, CELL_PIXELS)
    return grid


STENCILS: dict[str, np.ndarray] = {name: _parse(art) for name, art in _STENCIL_ART.items()}


def render_tile(shape_id: int, color_id: int, background: tuple[int, int, int]) -> np.ndarray:
    """Rasterize one glyph as a 9x9x3 uint8 tile over ``background``."""
    tile = np.empty((CELL_PIXELS, CELL_PIXELS, 3), dtype=np.uint8)
    tile[:, :] = background
    stencil = STENCILS[SHAPES[shape_id]]
    tile[stencil] = COLOR_RGB[COLORS[color_id]]
    return tile
