"""Dense actor-critic network with hand-rolled reverse-mode gradients.

The network is a shared tanh trunk with two linear heads (action mean and
scalar value) plus a state-independent log-std vector. Everything is float64;
the networks involved are tiny, so determinism beats speed.

Checkpoint byte layout: uint32 little-endian header length, UTF-8 JSON header
(layer sizes, step count, extra metadata), then the flat parameter vector as
little-endian float64 in ``flat_params`` order (trunk W/b per layer, actor
W/b, critic W/b, log_std).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def orthogonal_init(rng: np.random.Generator, shape: tuple[int, int],
                    gain: float) -> np.ndarray:
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[:shape[0], :shape[1]]


class ActorCritic:
    """Shared-trunk MLP: tanh hidden layers, linear mean/value heads.

    ``layer_sizes`` is [obs_dim, hidden..., action_dim]; the critic head hangs
    off the last hidden layer.
    """

    def __init__(self, layer_sizes: list[int],
                 rng: np.random.Generator | None = None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = list(layer_sizes)
        self.obs_dim = layer_sizes[0]
        self.action_dim = layer_sizes[-1]
        hidden = layer_sizes[1:-1]
        rng = rng if rng is not None else np.random.default_rng()
        dims = [self.obs_dim] + hidden
        self.trunk_w = [orthogonal_init(rng, (dims[i], dims[i + 1]), np.sqrt(2.0))
                        for i in range(len(hidden))]
        self.trunk_b = [np.zeros(d) for d in hidden]
        last = dims[-1]
        self.actor_w = orthogonal_init(rng, (last, self.action_dim), 0.01)
        self.actor_b = np.zeros(self.action_dim)
        self.critic_w = orthogonal_init(rng, (last, 1), 1.0)
        self.critic_b = np.zeros(1)
        self.log_std = np.zeros(self.action_dim)

    # --- parameter plumbing -------------------------------------------------

    def param_arrays(self) -> list[np.ndarray]:
        arrs = []
        for w, b in zip(self.trunk_w, self.trunk_b):
            arrs.extend([w, b])
        arrs.extend([self.actor_w, self.actor_b, self.critic_w, self.critic_b,
                     self.log_std])
        return arrs

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.param_arrays()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for a in self.param_arrays():
            a[...] = flat[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        if pos != flat.size:
            raise ValueError("flat parameter vector has wrong length")

    # --- forward / backward -------------------------------------------------

    def forward(self, obs: np.ndarray, cache: dict | None = None
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (mean, log_std, value) for a batch (or single) observation."""
        x = np.atleast_2d(np.asarray(obs, dtype=float))
        if x.shape[1] != self.obs_dim:
            raise ValueError(f"observation dim {x.shape[1]} != {self.obs_dim}")
        acts = [x]
        h = x
        for w, b in zip(self.trunk_w, self.trunk_b):
            h = np.tanh(h @ w + b)
            acts.append(h)
        mean = h @ self.actor_w + self.actor_b
        value = (h @ self.critic_w + self.critic_b)[:, 0]
        if cache is not None:
            cache["acts"] = acts
        return mean, self.log_std.copy(), value

    def backward(self, cache: dict, d_mean: np.ndarray, d_value: np.ndarray,
                 d_log_std: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss given its partials w.r.t. the outputs.

        d_mean: (B, action_dim); d_value: (B,); d_log_std: (action_dim,).
        Returns gradient arrays in param_arrays() order.
        """
        acts = cache["acts"]
        h = acts[-1]
        d_value = np.asarray(d_value, dtype=float).reshape(-1, 1)
        g_actor_w = h.T @ d_mean
        g_actor_b = d_mean.sum(axis=0)
        g_critic_w = h.T @ d_value
        g_critic_b = d_value.sum(axis=0)
        dh = d_mean @ self.actor_w.T + d_value @ self.critic_w.T
        g_trunk_w = [None] * len(self.trunk_w)
        g_trunk_b = [None] * len(self.trunk_b)
        for layer in range(len(self.trunk_w) - 1, -1, -1):
            dz = dh * (1.0 - acts[layer + 1] ** 2)
            g_trunk_w[layer] = acts[layer].T @ dz
            g_trunk_b[layer] = dz.sum(axis=0)
            dh = dz @ self.trunk_w[layer].T
        grads = []
        for gw, gb in zip(g_trunk_w, g_trunk_b):
            grads.extend([gw, gb])
        grads.extend([g_actor_w, g_actor_b, g_critic_w, g_critic_b,
                      np.asarray(d_log_std, dtype=float).copy()])
        return grads

    # --- persistence ----------------------------------------------------------

    def save(self, path, step: int = 0, meta: dict | None = None) -> None:
        header = {"layer_sizes": self.layer_sizes, "step": step,
                  "meta": meta or {}}
        hb = json.dumps(header).encode("utf-8")
        blob = self.flat_params().astype("<f8").tobytes()
        with open(path, "wb") as f:
            f.write(struct.pack("<I", len(hb)))
            f.write(hb)
            f.write(blob)

    @classmethod
    def load(cls, path) -> tuple["ActorCritic", dict]:
        with open(path, "rb") as f:
            (hlen,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(hlen).decode("utf-8"))
            blob = f.read()
        net = cls(header["layer_sizes"], rng=np.random.default_rng(0))
        net.set_flat_params(np.frombuffer(blob, dtype="<f8"))
        return net, header


def gaussian_logprob_entropy(mean: np.ndarray, log_std: np.ndarray,
                             action: np.ndarray) -> tuple[np.ndarray, float]:
    """Diagonal-Gaussian log-density per sample and (state-independent)
    entropy.

    logp = sum_i [-1/2 ((a_i - mu_i)/sigma_i)^2 - log sigma_i - 1/2 log 2 pi];
    entropy = sum_i [1/2 + 1/2 log 2 pi + log sigma_i].
    """
    mean = np.atleast_2d(mean)
    action = np.atleast_2d(action)
    std = np.exp(log_std)
    z = (action - mean) / std
    logp = (-0.5 * z ** 2 - log_std - 0.5 * LOG_2PI).sum(axis=1)
    entropy = float((0.5 + 0.5 * LOG_2PI + log_std).sum())
    return logp, entropy


def gaussian_logprob_grads(mean: np.ndarray, log_std: np.ndarray,
                           action: np.ndarray
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Partials of per-sample logp w.r.t. mean (B, d) and log_std (B, d)."""
    std = np.exp(log_std)
    z = (np.atleast_2d(action) - np.atleast_2d(mean)) / std
    d_mean = z / std
    d_log_std = z ** 2 - 1.0
    return d_mean, d_log_std


@dataclass
class Adam:
    """Standard Adam with bias correction over a flat parameter vector."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def init(self, n_params: int) -> None:
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if not hasattr(self, "m"):
            self.init(params.size)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(grads: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grads))
    if norm > max_norm and norm > 0.0:
        return grads * (max_norm / norm)
    return grads


def flatten_grads(grad_arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grad_arrays])
