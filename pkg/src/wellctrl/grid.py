"""Structured 2D grid geometry and well-location registries.

Cells are indexed (i, j) with i along x and j along y; the flat index is
``j * nx + i``. All geometry is immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid of nx-by-ny cells over an lx-by-ly domain (ft)."""

    nx: int
    ny: int
    lx: float
    ly: float
    phi: float
    dx: float = field(init=False)
    dy: float = field(init=False)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError("physical extents must be positive")
        if not 0.0 < self.phi < 1.0:
            raise ValueError(f"porosity must lie in (0, 1), got {self.phi}")
        object.__setattr__(self, "dx", self.lx / self.nx)
        object.__setattr__(self, "dy", self.ly / self.ny)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def pore_volume(self) -> float:
        return self.phi * self.lx * self.ly

    def flatten(self, i: int, j: int) -> int:
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise IndexError(f"cell ({i}, {j}) outside {self.nx}x{self.ny} grid")
        return j * self.nx + i

    def unflatten(self, idx: int) -> tuple[int, int]:
        if not 0 <= idx < self.n_cells:
            raise IndexError(f"flat index {idx} outside [0, {self.n_cells})")
        return idx % self.nx, idx // self.nx

    def cell_center(self, idx: int) -> tuple[float, float]:
        i, j = self.unflatten(idx)
        return (i + 0.5) * self.dx, (j + 0.5) * self.dy

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "lx": self.lx, "ly": self.ly,
                "phi": self.phi}


@dataclass(frozen=True)
class WellSet:
    """Producer/injector cell registries and the total source/sink rate."""

    producers: tuple[int, ...]
    injectors: tuple[int, ...]
    total_rate: float

    def __post_init__(self):
        if set(self.producers) & set(self.injectors):
            raise ValueError("producer and injector cells must be disjoint")
        if self.total_rate <= 0:
            raise ValueError("total rate must be positive")

    @property
    def n_p(self) -> int:
        return len(self.producers)

    @property
    def n_i(self) -> int:
        return len(self.injectors)

    def to_dict(self) -> dict:
        return {"producers": list(self.producers),
                "injectors": list(self.injectors),
                "total_rate": self.total_rate}


def build_grid(nx: int, ny: int, lx: float, ly: float, phi: float) -> Grid:
    """Build a grid, validating parameter bounds."""
    return Grid(nx=nx, ny=ny, lx=lx, ly=ly, phi=phi)


def _check_bounds(grid: Grid, cells: list[int]) -> None:
    for c in cells:
        grid.unflatten(c)


def case1_wells(grid: Grid, total_rate: float = 2304.0) -> WellSet:
    """Edge-drive well pattern: injectors down the left column, producers down
    the right column, on every other row starting at row 0.

    On a 61-cell edge this places 31 wells per side; smaller odd grids keep the
    same alternating rule with proportionally fewer wells.
    """
    if grid.ny < 5:
        raise ValueError(f"grid too small for edge well pattern (ny={grid.ny})")
    rows = range(0, grid.ny, 2)
    injectors = tuple(grid.flatten(0, j) for j in rows)
    producers = tuple(grid.flatten(grid.nx - 1, j) for j in rows)
    return WellSet(producers=producers, injectors=injectors, total_rate=total_rate)


def case2_wells(grid: Grid, total_rate: float = 8064.0) -> WellSet:
    """Five-spot pattern: producers at the four corners, one injector at the
    center cell. Requires odd nx and ny so a unique center exists.
    """
    if grid.nx % 2 == 0 or grid.ny % 2 == 0:
        raise ValueError("five-spot pattern needs odd nx and ny (no center cell "
                         f"on {grid.nx}x{grid.ny})")
    producers = (
        grid.flatten(0, 0),
        grid.flatten(grid.nx - 1, 0),
        grid.flatten(0, grid.ny - 1),
        grid.flatten(grid.nx - 1, grid.ny - 1),
    )
    injectors = (grid.flatten(grid.nx // 2, grid.ny // 2),)
    return WellSet(producers=producers, injectors=injectors, total_rate=total_rate)
