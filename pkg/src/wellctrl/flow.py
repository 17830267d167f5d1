"""Finite-volume solver for incompressible single-phase tracer flow.

Pressure: two-point flux approximation with harmonic-mean transmissibilities
and no-flow boundaries (pure Neumann; the gauge is fixed by pinning cell 0 to
zero). Transport: implicit upwind discretization of the linear advection
equation, unconditionally stable and monotone.

Cell fields are flat arrays in the grid's ``j * nx + i`` order. Face arrays:
``tx``/``fx`` have shape (ny, nx+1), ``ty``/``fy`` have shape (ny+1, nx);
boundary faces carry exactly zero. Positive flux points in +x / +y.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, WellSet

# dense/sparse-direct path is used up to this many cells; beyond it, the
# pressure system is solved with diagonally preconditioned CG
DIRECT_SOLVE_MAX_CELLS = 4096


def assemble_transmissibilities(grid: Grid, perm: np.ndarray, mu: float
                                ) -> tuple[np.ndarray, np.ndarray]:
    """Face transmissibilities from cell permeabilities.

    Interior faces get the harmonic mean of the adjacent cell mobilities k/mu
    times the face geometry factor (dy/dx for x-faces, dx/dy for y-faces).
    """
    k = np.asarray(perm, dtype=float).reshape(grid.ny, grid.nx)
    if np.any(k <= 0):
        raise ValueError("permeability must be positive")
    mob = k / mu
    tx = np.zeros((grid.ny, grid.nx + 1))
    ty = np.zeros((grid.ny + 1, grid.nx))
    tx[:, 1:-1] = (grid.dy / grid.dx) * 2.0 * mob[:, :-1] * mob[:, 1:] / (
        mob[:, :-1] + mob[:, 1:])
    ty[1:-1, :] = (grid.dx / grid.dy) * 2.0 * mob[:-1, :] * mob[1:, :] / (
        mob[:-1, :] + mob[1:, :])
    return tx, ty


def pressure_matrix(grid: Grid, tx: np.ndarray, ty: np.ndarray) -> sp.csr_matrix:
    """Assemble the (singular) TPFA pressure operator A with A p = q."""
    n = grid.n_cells
    idx = np.arange(n).reshape(grid.ny, grid.nx)
    rows, cols, vals = [], [], []

    def add_faces(t_int, left, right):
        rows.extend([left, right, left, right])
        cols.extend([left, right, right, left])
        vals.extend([t_int, t_int, -t_int, -t_int])

    tx_int = tx[:, 1:-1].ravel()
    lx_ = idx[:, :-1].ravel()
    rx_ = idx[:, 1:].ravel()
    add_faces(tx_int, lx_, rx_)
    ty_int = ty[1:-1, :].ravel()
    ly_ = idx[:-1, :].ravel()
    ry_ = idx[1:, :].ravel()
    add_faces(ty_int, ly_, ry_)
    rows = np.concatenate(rows) if isinstance(rows[0], np.ndarray) else np.array(rows)
    cols = np.concatenate(cols) if isinstance(cols[0], np.ndarray) else np.array(cols)
    vals = np.concatenate(vals) if isinstance(vals[0], np.ndarray) else np.array(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def rates_vector(grid: Grid, wells: WellSet, well_rates: np.ndarray) -> np.ndarray:
    """Scatter per-well rates (producers first, then injectors) onto cells."""
    q = np.zeros(grid.n_cells)
    wr = np.asarray(well_rates, dtype=float)
    if wr.size != wells.n_p + wells.n_i:
        raise ValueError("rate vector length must be n_p + n_i")
    q[list(wells.producers)] += wr[:wells.n_p]
    q[list(wells.injectors)] += wr[wells.n_p:]
    return q


class PressureSolver:
    """Gauge-fixed pressure solves for a fixed transmissibility field.

    The pure-Neumann nullspace is removed by eliminating cell 0 (p[0] = 0);
    the reduced system is SPD. For grids up to DIRECT_SOLVE_MAX_CELLS the
    reduced matrix is factorized once (sparse LU) and reused across solves;
    larger systems fall back to diagonally preconditioned CG with relative
    tolerance 1e-10.
    """

    def __init__(self, grid: Grid, tx: np.ndarray, ty: np.ndarray):
        self.grid = grid
        a_full = pressure_matrix(grid, tx, ty)
        self._a_red = a_full[1:, 1:].tocsc()
        self._direct = grid.n_cells <= DIRECT_SOLVE_MAX_CELLS
        if self._direct:
            self._lu = spla.splu(self._a_red)
        else:
            d = self._a_red.diagonal()
            self._precond = spla.LinearOperator(
                self._a_red.shape, matvec=lambda x: x / d)

    def solve(self, q: np.ndarray) -> np.ndarray:
        total = q.sum()
        scale = np.abs(q).sum()
        if scale > 0 and abs(total) > 1e-9 * scale:
            raise ValueError(f"source rates must balance; sum = {total:.3e}")
        rhs = q[1:]
        if self._direct:
            p_red = self._lu.solve(rhs)
        else:
            p_red, info = spla.cg(self._a_red, rhs, rtol=1e-10, atol=0.0,
                                  M=self._precond, maxiter=10 * self.grid.n_cells)
            if info != 0:
                raise RuntimeError(f"pressure CG did not converge (info={info})")
        return np.concatenate(([0.0], p_red))


def solve_pressure(grid: Grid, tx: np.ndarray, ty: np.ndarray,
                   q: np.ndarray) -> np.ndarray:
    """One-shot pressure solve; use PressureSolver for repeated rates."""
    return PressureSolver(grid, tx, ty).solve(q)


def darcy_fluxes(grid: Grid, tx: np.ndarray, ty: np.ndarray, p: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Face fluxes from a pressure field; boundary faces stay zero."""
    p2 = p.reshape(grid.ny, grid.nx)
    fx = np.zeros_like(tx)
    fy = np.zeros_like(ty)
    fx[:, 1:-1] = tx[:, 1:-1] * (p2[:, :-1] - p2[:, 1:])
    fy[1:-1, :] = ty[1:-1, :] * (p2[:-1, :] - p2[1:, :])
    return fx, fy


def flux_divergence(grid: Grid, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    """Net outflow per cell (should equal the source rates)."""
    div = (fx[:, 1:] - fx[:, :-1]) + (fy[1:, :] - fy[:-1, :])
    return div.ravel()


def transport_matrix(grid: Grid, fx: np.ndarray, fy: np.ndarray,
                     q: np.ndarray) -> sp.csr_matrix:
    """Upwind advection operator M such that (d/dt of cell tracer content)
    picks up -M s from advection plus producer withdrawal.

    Row i of M sums the upwind-donor outflows of cell i minus its inflows,
    plus |q^-_i| for producer cells; M is an M-matrix, which makes the
    implicit step monotone.
    """
    n = grid.n_cells
    idx = np.arange(n).reshape(grid.ny, grid.nx)
    rows, cols, vals = [], [], []

    def add(face_flux, left, right):
        f = face_flux.ravel()
        l_ = left.ravel()
        r_ = right.ravel()
        pos = f > 0
        neg = f < 0
        # donor = left cell when flux is positive
        rows.append(l_[pos]); cols.append(l_[pos]); vals.append(f[pos])
        rows.append(r_[pos]); cols.append(l_[pos]); vals.append(-f[pos])
        # donor = right cell when flux is negative
        rows.append(r_[neg]); cols.append(r_[neg]); vals.append(-f[neg])
        rows.append(l_[neg]); cols.append(r_[neg]); vals.append(f[neg])

    add(fx[:, 1:-1], idx[:, :-1], idx[:, 1:])
    add(fy[1:-1, :], idx[:-1, :], idx[1:, :])
    prod = np.where(q < 0)[0]
    rows.append(prod); cols.append(prod); vals.append(-q[prod])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


class TransportStepper:
    """Implicit upwind substeps with a fixed velocity field and substep size."""

    def __init__(self, grid: Grid, fx: np.ndarray, fy: np.ndarray,
                 q: np.ndarray, dt_sub: float):
        self.grid = grid
        self.q_in = np.clip(q, 0.0, None)      # injector source, tracer fraction 1
        pv = grid.phi * grid.cell_area / dt_sub
        m = transport_matrix(grid, fx, fy, q)
        a = (sp.eye(grid.n_cells) * pv + m).tocsc()
        self._lu = spla.splu(a)
        self._pv = pv

    def step(self, s: np.ndarray) -> np.ndarray:
        rhs = self._pv * s + self.q_in
        return self._lu.solve(rhs)


def advance_saturation(grid: Grid, s: np.ndarray, fx: np.ndarray,
                       fy: np.ndarray, q: np.ndarray, dt_sub: float
                       ) -> np.ndarray:
    """One implicit upwind substep."""
    return TransportStepper(grid, fx, fy, q, dt_sub).step(s)


class FlowSimulator:
    """Holds the per-permeability setup (transmissibilities + pressure
    factorization) and steps the coupled system one control step at a time.

    Velocity is constant inside a control step (incompressible single-phase
    flow with fixed rates), so pressure is solved once per step and the
    transport operator is factorized once and reused for all substeps.
    """

    def __init__(self, grid: Grid, wells: WellSet, perm: np.ndarray,
                 mu: float = 0.3, n_sub: int = 10):
        self.grid = grid
        self.wells = wells
        self.mu = mu
        self.n_sub = n_sub
        self.tx, self.ty = assemble_transmissibilities(grid, perm, mu)
        self._psolver = PressureSolver(grid, self.tx, self.ty)

    def solve_pressure(self, well_rates: np.ndarray) -> np.ndarray:
        q = rates_vector(self.grid, self.wells, well_rates)
        return self._psolver.solve(q)

    def control_step(self, s: np.ndarray, well_rates: np.ndarray,
                     dt_control: float) -> tuple[np.ndarray, float, np.ndarray]:
        """Advance one control step; returns (s_new, oil_produced, pressure).

        Oil production is accumulated per substep with the end-of-substep
        saturation (consistent with the implicit scheme):
        sum over producers of |q^-| * (1 - s_producer) * dt_sub.
        """
        q = rates_vector(self.grid, self.wells, well_rates)
        p = self._psolver.solve(q)
        fx, fy = darcy_fluxes(self.grid, self.tx, self.ty, p)
        dt_sub = dt_control / self.n_sub
        stepper = TransportStepper(self.grid, fx, fy, q, dt_sub)
        prod_cells = np.array(self.wells.producers, dtype=int)
        prod_rates = -q[prod_cells]            # positive withdrawal rates
        oil = 0.0
        for _ in range(self.n_sub):
            s = stepper.step(s)
            oil += dt_sub * float(prod_rates @ (1.0 - s[prod_cells]))
        return s, oil, p


def simulate_control_step(grid: Grid, wells: WellSet, perm: np.ndarray,
                          s: np.ndarray, well_rates: np.ndarray,
                          dt_control: float, n_sub: int = 10,
                          mu: float = 0.3) -> tuple[np.ndarray, float]:
    """Functional one-shot wrapper around FlowSimulator.control_step."""
    sim = FlowSimulator(grid, wells, perm, mu=mu, n_sub=n_sub)
    s_new, oil, _ = sim.control_step(s, well_rates, dt_control)
    return s_new, oil
