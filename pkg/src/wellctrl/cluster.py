"""Scenario selection: connectivity distances, 2D embedding, clustering.

Permeability samples are compared by the squared difference of their
saturation trajectories under base controls, embedded into the plane with
classical multidimensional scaling, and grouped with k-means. The training
vector takes the sample nearest each cluster centroid; the evaluation vector
takes one random different sample per cluster.

The MDS and k-means steps follow the scikit-learn estimator convention
(``fit`` / ``fit_transform`` / ``get_params``) so they compose with the wider
ecosystem.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import weights_to_rates
from .flow import FlowSimulator
from .grid import Grid, WellSet, build_grid
from .permfields import PermField


def base_trajectory(grid: Grid, wells: WellSet, field: PermField,
                    t_total: float, m_steps: int, n_sub: int = 10,
                    mu: float = 0.3,
                    probes: np.ndarray | None = None) -> np.ndarray:
    """Saturation snapshots at probe cells under all-equal controls.

    Returns (m_steps + 1, n_probes) including the initial (all-zero) state.
    """
    sim = FlowSimulator(grid, wells, field.k, mu=mu, n_sub=n_sub)
    rates = weights_to_rates(np.ones(wells.n_p + wells.n_i), wells)
    if probes is None:
        probes = np.arange(grid.n_cells)
    s = np.zeros(grid.n_cells)
    snaps = [s[probes].copy()]
    dt = t_total / m_steps
    for _ in range(m_steps):
        s, _, _ = sim.control_step(s, rates, dt)
        snaps.append(s[probes].copy())
    return np.stack(snaps)


def connectivity_distance_matrix(samples: Sequence[PermField], grid: Grid,
                                 wells: WellSet, t_total: float,
                                 m_steps: int = 5, n_sub: int = 10,
                                 mu: float = 0.3,
                                 probes: np.ndarray | None = None,
                                 workers: int = 1) -> np.ndarray:
    """Pairwise trajectory distances D[i, j] = sum over probes of the
    time-rectangle-rule integral of (s_i - s_j)^2.

    Each sample is simulated exactly once under base controls; snapshots are
    taken at the control-step boundaries.
    """
    for s in samples:
        if s.g.size != grid.n_cells:
            raise ValueError("all samples must live on the given grid")
    dt = t_total / m_steps

    def run(field):
        return base_trajectory(grid, wells, field, t_total, m_steps,
                               n_sub=n_sub, mu=mu, probes=probes)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = np.stack(list(pool.map(run, samples)))
    else:
        trajs = np.stack([run(f) for f in samples])
    # left-rectangle rule over the snapshots at t_0 .. t_{M-1}
    n = len(samples)
    d = np.zeros((n, n))
    for i in range(n):
        diff = trajs[i + 1:, :m_steps, :] - trajs[i, :m_steps, :]
        row = dt * np.sum(diff ** 2, axis=(1, 2))
        d[i, i + 1:] = row
        d[i + 1:, i] = row
    return d


class ClassicalMDS:
    """Classical (Torgerson) multidimensional scaling.

    fit_transform double-centers -1/2 * J D^2 J (D squared elementwise),
    takes the top eigenpairs, and scales eigenvectors by the square roots of
    the eigenvalues clamped to be nonnegative.
    """

    def __init__(self, n_components: int = 2):
        self.n_components = n_components

    def get_params(self, deep: bool = True) -> dict:
        return {"n_components": self.n_components}

    def set_params(self, **params) -> "ClassicalMDS":
        for k, v in params.items():
            setattr(self, k, v)
        return self

    def fit(self, dist: np.ndarray) -> "ClassicalMDS":
        self.fit_transform(dist)
        return self

    def fit_transform(self, dist: np.ndarray) -> np.ndarray:
        d = np.asarray(dist, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(d, d.T) or np.any(np.diag(d) != 0.0):
            raise ValueError("distance matrix must be symmetric with zero diagonal")
        n = d.shape[0]
        j = np.eye(n) - np.ones((n, n)) / n
        b = -0.5 * j @ (d ** 2) @ j
        w, v = np.linalg.eigh(b)
        order = np.argsort(w)[::-1][:self.n_components]
        lam = np.clip(w[order], 0.0, None)
        self.eigenvalues_ = lam
        self.embedding_ = v[:, order] * np.sqrt(lam)
        return self.embedding_


class KMeans:
    """Lloyd's algorithm with k-means++ seeding and restarts.

    Inertia is asserted non-increasing across Lloyd iterations; the best of
    ``n_init`` seedings is kept.
    """

    def __init__(self, n_clusters: int, n_init: int = 8, max_iter: int = 300,
                 seed: int = 0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.seed = seed

    def get_params(self, deep: bool = True) -> dict:
        return {"n_clusters": self.n_clusters, "n_init": self.n_init,
                "max_iter": self.max_iter, "seed": self.seed}

    def set_params(self, **params) -> "KMeans":
        for k, v in params.items():
            setattr(self, k, v)
        return self

    @staticmethod
    def _plusplus_seed(x: np.ndarray, k: int, rng: np.random.Generator
                       ) -> np.ndarray:
        n = x.shape[0]
        centers = [x[rng.integers(n)]]
        for _ in range(1, k):
            d2 = np.min(
                ((x[:, None, :] - np.array(centers)[None, :, :]) ** 2).sum(-1),
                axis=1)
            total = d2.sum()
            if total == 0.0:
                centers.append(x[rng.integers(n)])
                continue
            probs = d2 / total
            centers.append(x[rng.choice(n, p=probs)])
        return np.array(centers)

    def _lloyd(self, x: np.ndarray, centers: np.ndarray
               ) -> tuple[np.ndarray, np.ndarray, float]:
        labels = None
        prev_inertia = np.inf
        for _ in range(self.max_iter):
            d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
            new_labels = d2.argmin(axis=1)
            inertia = float(d2[np.arange(x.shape[0]), new_labels].sum())
            assert inertia <= prev_inertia + 1e-12 * max(1.0, abs(prev_inertia)), \
                "k-means inertia increased"
            prev_inertia = inertia
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(self.n_clusters):
                mask = labels == c
                if mask.any():
                    centers[c] = x[mask].mean(axis=0)
        return labels, centers, prev_inertia

    def fit(self, x: np.ndarray) -> "KMeans":
        x = np.asarray(x, dtype=float)
        if x.shape[0] < self.n_clusters:
            raise ValueError("fewer points than clusters")
        rng = np.random.default_rng(self.seed)
        best = None
        for _ in range(self.n_init):
            centers = self._plusplus_seed(x, self.n_clusters, rng)
            labels, centers, inertia = self._lloyd(x, centers.copy())
            if best is None or inertia < best[2]:
                best = (labels, centers, inertia)
        self.labels_, self.cluster_centers_, self.inertia_ = best
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        d2 = ((np.asarray(x, float)[:, None, :]
               - self.cluster_centers_[None, :, :]) ** 2).sum(-1)
        return d2.argmin(axis=1)


def select_vectors(coords: np.ndarray, labels: np.ndarray,
                   centers: np.ndarray, rng: np.random.Generator
                   ) -> tuple[list[int], list[int]]:
    """Training id per cluster = sample nearest the centroid; evaluation id
    drawn uniformly from the rest of the cluster. A singleton cluster falls
    back to the nearest other cluster with a warning.
    """
    n_clusters = centers.shape[0]
    training, evaluation = [], []
    for c in range(n_clusters):
        members = np.where(labels == c)[0]
        if members.size == 0:
            raise ValueError(f"cluster {c} is empty")
        d2 = ((coords[members] - centers[c]) ** 2).sum(axis=1)
        training.append(int(members[d2.argmin()]))
    for c in range(n_clusters):
        members = [int(m) for m in np.where(labels == c)[0]
                   if int(m) != training[c]]
        if not members:
            warnings.warn(f"cluster {c} is a singleton; drawing its "
                          "evaluation sample from the nearest other cluster")
            d2 = ((centers - centers[c]) ** 2).sum(axis=1)
            d2[c] = np.inf
            alt = int(d2.argmin())
            members = [int(m) for m in np.where(labels == alt)[0]
                       if int(m) not in training]
            if not members:
                members = [int(m) for m in np.where(labels == alt)[0]]
        evaluation.append(int(rng.choice(members)))
    return training, evaluation


@dataclass
class ScenarioSet:
    """All samples plus the clustering artifacts and the selected vectors."""

    grid: Grid
    samples: list[PermField]
    dist: np.ndarray
    coords: np.ndarray
    labels: np.ndarray
    training_ids: list[int]
    evaluation_ids: list[int]

    def __post_init__(self):
        if set(self.training_ids) & set(self.evaluation_ids):
            raise ValueError("training and evaluation vectors must be disjoint")

    @property
    def training_fields(self) -> list[PermField]:
        return [self.samples[i] for i in self.training_ids]

    @property
    def evaluation_fields(self) -> list[PermField]:
        return [self.samples[i] for i in self.evaluation_ids]

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "grid": self.grid.to_dict(),
            "n_samples": len(self.samples),
            "labels": self.labels.tolist(),
            "training_ids": list(self.training_ids),
            "evaluation_ids": list(self.evaluation_ids),
        }
        with open(out / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2)
        np.savetxt(out / "distance_matrix.csv", self.dist, delimiter=",",
                   fmt="%.17g")
        np.savetxt(out / "mds_coords.csv", self.coords, delimiter=",",
                   fmt="%.17g")
        fields = out / "fields"
        fields.mkdir(exist_ok=True)
        for i, s in enumerate(self.samples):
            s.save_csv(fields / f"sample_{i:04d}.csv")

    @classmethod
    def load(cls, in_dir: str | Path) -> "ScenarioSet":
        src = Path(in_dir)
        with open(src / "manifest.json") as f:
            manifest = json.load(f)
        g = manifest["grid"]
        grid = build_grid(g["nx"], g["ny"], g["lx"], g["ly"], g["phi"])
        samples = [PermField.load_csv(src / "fields" / f"sample_{i:04d}.csv")
                   for i in range(manifest["n_samples"])]
        dist = np.loadtxt(src / "distance_matrix.csv", delimiter=",")
        coords = np.loadtxt(src / "mds_coords.csv", delimiter=",")
        if coords.ndim == 1:
            coords = coords[:, None]
        return cls(grid=grid, samples=samples, dist=dist, coords=coords,
                   labels=np.array(manifest["labels"]),
                   training_ids=manifest["training_ids"],
                   evaluation_ids=manifest["evaluation_ids"])


def build_scenario_set(samples: Sequence[PermField], grid: Grid,
                       wells: WellSet, t_total: float, n_clusters: int,
                       rng: np.random.Generator, m_steps: int = 5,
                       n_sub: int = 10, mu: float = 0.3,
                       probes: np.ndarray | None = None,
                       workers: int = 1) -> ScenarioSet:
    """Full pipeline: distances, MDS to 2D, k-means, vector selection."""
    dist = connectivity_distance_matrix(samples, grid, wells, t_total,
                                        m_steps=m_steps, n_sub=n_sub, mu=mu,
                                        probes=probes, workers=workers)
    coords = ClassicalMDS(n_components=2).fit_transform(dist)
    km = KMeans(n_clusters=n_clusters,
                seed=int(rng.integers(2 ** 31))).fit(coords)
    training, evaluation = select_vectors(coords, km.labels_,
                                          km.cluster_centers_, rng)
    return ScenarioSet(grid=grid, samples=list(samples), dist=dist,
                       coords=coords, labels=km.labels_,
                       training_ids=training, evaluation_ids=evaluation)
