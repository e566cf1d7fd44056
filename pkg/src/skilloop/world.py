"""Deterministic quasi-static blocks world on a small lattice.

Three colored cubes and a two-finger gripper move on a discrete grid.
Positions are stored as integer cell indices so that equality checks and
serialization are exact; metric coordinates are derived with the cell
pitch constants below only where geometry is needed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

__all__ = [
    "ACTIONS",
    "Action",
    "COLORS",
    "Cell",
    "GRID_XY",
    "GRID_Z",
    "SceneDescription",
    "WorldState",
    "XY_CELL_M",
    "Z_CELL_M",
    "cell_to_meters",
    "describe",
    "render",
    "reset",
    "step",
    "validate",
]

Cell = tuple[int, int, int]

COLORS = ("red", "green", "blue")

# x, y in {0 .. 0.35} at 0.05 m pitch; z in {0 .. 0.16} at 0.04 m pitch.
GRID_XY = 8
GRID_Z = 5
XY_CELL_M = 0.05
Z_CELL_M = 0.04

APERTURE_STEP = 0.5
GRASP_APERTURE = 0.5


class Action(IntEnum):
    MOVE_PX = 0
    MOVE_NX = 1
    MOVE_PY = 2
    MOVE_NY = 3
    MOVE_PZ = 4
    MOVE_NZ = 5
    OPEN = 6
    CLOSE = 7


ACTIONS = tuple(Action)

_MOVE_DELTAS: dict[Action, tuple[int, int, int]] = {
    Action.MOVE_PX: (1, 0, 0),
    Action.MOVE_NX: (-1, 0, 0),
    Action.MOVE_PY: (0, 1, 0),
    Action.MOVE_NY: (0, -1, 0),
    Action.MOVE_PZ: (0, 0, 1),
    Action.MOVE_NZ: (0, 0, -1),
}


@dataclass(frozen=True)
class WorldState:
    """Snapshot of the workspace.

    objects maps color name to its lattice cell. While an object is held it
    tracks the tcp cell exactly; otherwise it rests on the floor or directly
    on another object.
    """

    objects: dict[str, Cell]
    tcp: Cell
    aperture: float
    grasp_sensor: bool
    held: str | None

    def object_cell(self, color: str) -> Cell:
        return self.objects[color]


def cell_to_meters(cell: Cell) -> tuple[float, float, float]:
    return (cell[0] * XY_CELL_M, cell[1] * XY_CELL_M, cell[2] * Z_CELL_M)


def _in_bounds(cell: Cell) -> bool:
    x, y, z = cell
    return 0 <= x < GRID_XY and 0 <= y < GRID_XY and 0 <= z < GRID_Z


def _support_top(state: WorldState, x: int, y: int, ignore: str | None) -> int:
    """Highest occupied z in column (x, y), or -1 for bare floor."""
    top = -1
    for color, cell in state.objects.items():
        if color == ignore:
            continue
        if cell[0] == x and cell[1] == y and cell[2] > top:
            top = cell[2]
    return top


def _landing_cell(state: WorldState, x: int, y: int, held: str) -> Cell:
    """Resolve where a released object comes to rest.

    It lands 0.04 m above the topmost object in its column, or on the floor.
    If that cell is unusable the nearest free floor cell is found by scanning
    offsets in +x, -x, +y, -y order at increasing distance.
    """
    top = _support_top(state, x, y, ignore=held)
    land = (x, y, top + 1)
    occupied = {c for col, c in state.objects.items() if col != held}
    if _in_bounds(land) and land not in occupied:
        return land
    for d in range(1, GRID_XY):
        for dx, dy in ((d, 0), (-d, 0), (0, d), (0, -d)):
            nx, ny = x + dx, y + dy
            if not (0 <= nx < GRID_XY and 0 <= ny < GRID_XY):
                continue
            if _support_top(state, nx, ny, ignore=held) == -1:
                return (nx, ny, 0)
    raise RuntimeError("no free cell to release the held object")


def step(state: WorldState, action: Action) -> WorldState:
    """Apply one discrete action. Total: out-of-range moves clamp to a no-op."""
    action = Action(action)
    if action in _MOVE_DELTAS:
        dx, dy, dz = _MOVE_DELTAS[action]
        target = (state.tcp[0] + dx, state.tcp[1] + dy, state.tcp[2] + dz)
        if not _in_bounds(target):
            return state
        if state.held is not None:
            # A held object cannot pass through a resting one.
            blocked = any(
                cell == target for color, cell in state.objects.items() if color != state.held
            )
            if blocked:
                return state
            objects = dict(state.objects)
            objects[state.held] = target
            return replace(state, objects=objects, tcp=target)
        return replace(state, tcp=target)

    if action is Action.CLOSE:
        aperture = max(0.0, state.aperture - APERTURE_STEP)
        held = state.held
        grasp = state.grasp_sensor
        if held is None and aperture <= GRASP_APERTURE:
            for color, cell in state.objects.items():
                if cell == state.tcp:
                    held = color
                    grasp = True
                    break
        return replace(state, aperture=aperture, held=held, grasp_sensor=grasp)

    # OPEN
    aperture = min(1.0, state.aperture + APERTURE_STEP)
    if state.held is not None and aperture > GRASP_APERTURE:
        land = _landing_cell(state, state.tcp[0], state.tcp[1], state.held)
        objects = dict(state.objects)
        objects[state.held] = land
        return replace(state, objects=objects, aperture=aperture, held=None, grasp_sensor=False)
    return replace(state, aperture=aperture)


def reset(seed: int) -> WorldState:
    """Fresh workspace: objects in distinct floor cells, gripper open and empty."""
    rng = np.random.default_rng(seed)
    floor = rng.choice(GRID_XY * GRID_XY, size=len(COLORS), replace=False)
    objects = {
        color: (int(idx) % GRID_XY, int(idx) // GRID_XY, 0)
        for color, idx in zip(COLORS, floor)
    }
    tcp = (
        int(rng.integers(GRID_XY)),
        int(rng.integers(GRID_XY)),
        int(rng.integers(GRID_Z)),
    )
    return WorldState(objects=objects, tcp=tcp, aperture=1.0, grasp_sensor=False, held=None)


def validate(state: WorldState) -> None:
    """Raise ValueError if a state breaks the world rules."""
    cells = list(state.objects.values())
    for cell in cells + [state.tcp]:
        if not _in_bounds(cell):
            raise ValueError(f"cell out of bounds: {cell}")
    if len(set(cells)) != len(cells):
        raise ValueError("two objects share a cell")
    if state.aperture not in (0.0, 0.5, 1.0):
        raise ValueError(f"aperture off the step lattice: {state.aperture}")
    if state.grasp_sensor != (state.held is not None):
        raise ValueError("grasp sensor disagrees with held")
    if state.held is not None:
        if state.objects[state.held] != state.tcp:
            raise ValueError("held object away from tcp")
        if state.aperture > GRASP_APERTURE:
            raise ValueError("held with open gripper")
    for color, (x, y, z) in state.objects.items():
        if color == state.held or z == 0:
            continue
        below = (x, y, z - 1)
        if below not in state.objects.values():
            raise ValueError(f"{color} floats at {(x, y, z)}")


@dataclass(frozen=True)
class SceneDescription:
    """Discrete, text-serializable abstraction of a WorldState."""

    cells: dict[str, Cell]
    supports: tuple[tuple[str, str], ...]  # (above, below) resting pairs
    tcp: Cell
    aperture: float
    held: str | None

    def to_text(self) -> str:
        parts = []
        below_of = dict((a, b) for a, b in self.supports)
        for color in COLORS:
            cell = self.cells[color]
            if color == self.held:
                where = "in the gripper"
            elif color in below_of:
                where = f"on {below_of[color]}"
            else:
                where = "on the floor"
            parts.append(f"{color} at cell {cell} {where}")
        holding = self.held if self.held is not None else "nothing"
        parts.append(
            f"gripper at cell {self.tcp}, aperture {self.aperture:.1f}, holding {holding}"
        )
        return "; ".join(parts)

    @classmethod
    def from_text(cls, text: str) -> "SceneDescription":
        cells: dict[str, Cell] = {}
        supports: list[tuple[str, str]] = []
        held: str | None = None
        obj_re = re.compile(
            r"(red|green|blue) at cell \((\d+), (\d+), (\d+)\) (in the gripper|on the floor|on (?:red|green|blue))"
        )
        for m in obj_re.finditer(text):
            color = m.group(1)
            cells[color] = (int(m.group(2)), int(m.group(3)), int(m.group(4)))
            where = m.group(5)
            if where == "in the gripper":
                held = color
            elif where.startswith("on ") and where != "on the floor":
                supports.append((color, where[3:]))
        grip_re = re.compile(
            r"gripper at cell \((\d+), (\d+), (\d+)\), aperture ([\d.]+), holding (\w+)"
        )
        g = grip_re.search(text)
        if g is None or len(cells) != len(COLORS):
            raise ValueError(f"unparseable scene text: {text!r}")
        tcp = (int(g.group(1)), int(g.group(2)), int(g.group(3)))
        return cls(
            cells=cells,
            supports=tuple(supports),
            tcp=tcp,
            aperture=float(g.group(4)),
            held=held,
        )


def describe(state: WorldState) -> SceneDescription:
    supports = []
    for color, (x, y, z) in state.objects.items():
        if color == state.held or z == 0:
            continue
        for other, cell in state.objects.items():
            if other != color and cell == (x, y, z - 1):
                supports.append((color, other))
    supports.sort(key=lambda pair: COLORS.index(pair[0]))
    return SceneDescription(
        cells={color: state.objects[color] for color in COLORS},
        supports=tuple(supports),
        tcp=state.tcp,
        aperture=state.aperture,
        held=state.held,
    )


_RGB = {"red": (200, 40, 40), "green": (40, 160, 60), "blue": (50, 80, 200)}


def render(state: WorldState, path: str, cell_px: int = 24) -> None:
    """Write a top-down raster of the scene. Output bytes depend only on state."""
    from PIL import Image, ImageDraw

    size = GRID_XY * cell_px
    img = Image.new("RGB", (size, size), (245, 245, 245))
    draw = ImageDraw.Draw(img)
    for i in range(GRID_XY + 1):
        draw.line([(i * cell_px, 0), (i * cell_px, size)], fill=(210, 210, 210))
        draw.line([(0, i * cell_px), (size, i * cell_px)], fill=(210, 210, 210))
    # Draw lower objects first so a stacked object shows as an inset square.
    for color, (x, y, z) in sorted(state.objects.items(), key=lambda kv: kv[1][2]):
        inset = 2 + 3 * z
        box = [
            x * cell_px + inset,
            (GRID_XY - 1 - y) * cell_px + inset,
            (x + 1) * cell_px - inset,
            (GRID_XY - y) * cell_px - inset,
        ]
        draw.rectangle(box, fill=_RGB[color], outline=(30, 30, 30))
    tx, ty, _ = state.tcp
    cx = tx * cell_px + cell_px // 2
    cy = (GRID_XY - 1 - ty) * cell_px + cell_px // 2
    open_grip = state.aperture > GRASP_APERTURE
    arm = max(3, cell_px // 3) if open_grip else max(2, cell_px // 5)
    draw.line([(cx - arm, cy), (cx + arm, cy)], fill=(0, 0, 0), width=2)
    draw.line([(cx, cy - arm), (cx, cy + arm)], fill=(0, 0, 0), width=2)
    img.save(path, format="PNG")
