"""Log-permeability field sampling.

Two uncertainty distributions are supported: a two-valued linear
high-permeability channel with uniformly random width and end offsets, and a
stationary Gaussian field with exponential covariance conditioned to a fixed
value at the well cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, WellSet


@dataclass(frozen=True)
class PermField:
    """One log-permeability realization; ``g`` is flat, length nx*ny."""

    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if not np.all(np.isfinite(g)):
            raise ValueError("log-permeability must be finite")
        object.__setattr__(self, "g", g)

    @property
    def k(self) -> np.ndarray:
        return np.exp(self.g)

    def save_csv(self, path) -> None:
        np.savetxt(path, self.g, fmt="%.17g")

    @staticmethod
    def load_csv(path) -> "PermField":
        return PermField(g=np.loadtxt(path, dtype=float))


@dataclass(frozen=True)
class ChannelParams:
    """Distribution parameters for the channel case.

    Width ~ U(w_min, w_max); both end offsets ~ U(0, L - w) given the width.
    """

    w_min: float = 120.0
    w_max: float = 360.0
    g_high: float = 5.5
    g_low: float = -2.0


@dataclass(frozen=True)
class GaussianFieldParams:
    mu_g: float = 2.41
    sigma: float = 2.5
    corr_len: float = 240.0

    def __post_init__(self):
        if self.sigma < 0 or self.corr_len <= 0:
            raise ValueError("sigma must be >= 0 and corr_len > 0")


def channel_field(grid: Grid, w: float, l1: float, l2: float,
                  g_high: float = 5.5, g_low: float = -2.0) -> PermField:
    """Deterministic channel realization for explicit (w, l1, l2).

    A cell belongs to the channel iff its center (x, y) satisfies
    slope*x + l1 <= y <= slope*x + l1 + w with slope = (l2 - l1) / L,
    y measured from the top edge of the domain.
    """
    L = grid.lx
    i = np.arange(grid.nx)
    j = np.arange(grid.ny)
    xc = (i + 0.5) * grid.dx
    # y measured downward from the top edge
    yc = (j + 0.5) * grid.dy
    slope = (l2 - l1) / L
    top = slope * xc[None, :] + l1          # (1, nx) broadcast over rows
    inside = (yc[:, None] >= top) & (yc[:, None] <= top + w)
    g = np.where(inside, g_high, g_low)
    return PermField(g=g.ravel())


def sample_channel(rng: np.random.Generator, grid: Grid,
                   params: ChannelParams = ChannelParams()) -> PermField:
    """Draw one channel realization: w ~ U(w_min, w_max), l1, l2 ~ U(0, L-w)."""
    L = grid.lx
    w = rng.uniform(params.w_min, params.w_max)
    l1 = rng.uniform(0.0, L - w)
    l2 = rng.uniform(0.0, L - w)
    return channel_field(grid, w, l1, l2, params.g_high, params.g_low)


def exp_kernel_cov(locs_a: np.ndarray, locs_b: np.ndarray,
                   sigma: float, corr_len: float) -> np.ndarray:
    """Exponential covariance sigma^2 * exp(-||a - b|| / corr_len)."""
    a = np.atleast_2d(np.asarray(locs_a, dtype=float))
    b = np.atleast_2d(np.asarray(locs_b, dtype=float))
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return sigma ** 2 * np.exp(-d / corr_len)


class ConditionalGaussianSampler:
    """Samples g ~ N(mu, Sigma) conditioned to g = mu_g at the well cells.

    The conditional covariance is
    Sigma = C(x, x) - C(x, x') C(x', x')^-1 C(x', x)
    with C the exponential kernel. All conditioning values equal the prior
    mean, so the conditional mean is mu_g everywhere. The factor of Sigma is
    precomputed once so repeated draws are cheap.
    """

    def __init__(self, grid: Grid, wells: WellSet,
                 params: GaussianFieldParams = GaussianFieldParams()):
        self.grid = grid
        self.params = params
        n = grid.n_cells
        locs = np.array([grid.cell_center(c) for c in range(n)])
        cond = list(wells.producers) + list(wells.injectors)
        self.cond_cells = np.array(cond, dtype=int)
        if params.sigma == 0.0:
            self._factor = np.zeros((n, n))
            return
        c_xx = exp_kernel_cov(locs, locs, params.sigma, params.corr_len)
        c_xw = exp_kernel_cov(locs, locs[self.cond_cells], params.sigma,
                              params.corr_len)
        c_ww = c_xw[self.cond_cells, :]
        sigma_g = c_xx - c_xw @ np.linalg.solve(c_ww, c_xw.T)
        sigma_g = 0.5 * (sigma_g + sigma_g.T)
        # exponential kernels on dense grids are near-singular
        jitter = 1e-10 * params.sigma ** 2
        w, v = np.linalg.eigh(sigma_g + jitter * np.eye(n))
        if w.min() < -1e-8 * params.sigma ** 2:
            raise np.linalg.LinAlgError(
                f"conditional covariance not PSD: min eigenvalue {w.min():.3e}")
        self._factor = v * np.sqrt(np.clip(w, 0.0, None))
        self.cov = sigma_g

    def sample(self, rng: np.random.Generator) -> PermField:
        z = rng.standard_normal(self.grid.n_cells)
        g = self.params.mu_g + self._factor @ z
        return PermField(g=g)


def sample_conditional_gaussian(rng: np.random.Generator, grid: Grid,
                                wells: WellSet,
                                params: GaussianFieldParams = GaussianFieldParams(),
                                ) -> PermField:
    """One-shot draw; build a ConditionalGaussianSampler for repeated use."""
    return ConditionalGaussianSampler(grid, wells, params).sample(rng)
