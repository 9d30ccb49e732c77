"""MLP policy/value networks with hand-written forward and backward passes.

Float64 throughout; gradients accumulate in per-layer buffers and are
exposed as a flat vector so the optimizer, gradient clipping, checkpoints
and finite-difference checks all share one parameter layout:
[W0, b0, W1, b1, ..., log_std (policy only)].
"""

from __future__ import annotations

import numpy as np

__all__ = ["MLP", "DiagonalGaussianPolicy", "ValueNet", "gaussian_log_prob"]


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float):
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a if rows >= cols else a.T)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MLP:
    """Fully connected net; linear output layer, relu/tanh hidden layers."""

    def __init__(self, sizes, activation="relu", rng=None, out_gain=1.0):
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.sizes = list(sizes)
        self.activation = activation
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            gain = out_gain if i == n_layers - 1 else np.sqrt(2.0)
            self.weights.append(
                _orthogonal(rng, self.sizes[i], self.sizes[i + 1], gain)
            )
            self.biases.append(np.zeros(self.sizes[i + 1]))
        self.zero_grads()
        self._cache = None

    def zero_grads(self):
        self.grad_w = [np.zeros_like(w) for w in self.weights]
        self.grad_b = [np.zeros_like(b) for b in self.biases]

    def forward(self, x: np.ndarray, cache: bool = False) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pre = []
        post = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            if i < last:
                h = np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)
            else:
                h = z
            post.append(h)
        if cache:
            self._cache = (pre, post)
        return h

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads for the cached batch; returns dx."""
        if self._cache is None:
            raise RuntimeError("forward(cache=True) must precede backward()")
        pre, post = self._cache
        dz = np.atleast_2d(np.asarray(dout, dtype=float))
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last:
                if self.activation == "relu":
                    dz = dz * (pre[i] > 0)
                else:
                    dz = dz * (1.0 - np.tanh(pre[i]) ** 2)
            self.grad_w[i] += post[i].T @ dz
            self.grad_b[i] += dz.sum(axis=0)
            dz = dz @ self.weights[i].T
        return dz

    # ---- flat parameter/gradient views -----------------------------------

    def flat_params(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.ravel(), b.ravel()])
             for w, b in zip(self.weights, self.biases)]
        )

    def set_flat_params(self, flat: np.ndarray):
        k = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[k : k + w.size].reshape(w.shape).copy()
            k += w.size
            self.biases[i] = flat[k : k + b.size].copy()
            k += b.size
        if k != flat.size:
            raise ValueError("flat parameter vector has wrong length")

    def flat_grads(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([gw.ravel(), gb.ravel()])
             for gw, gb in zip(self.grad_w, self.grad_b)]
        )

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def gaussian_log_prob(mean, log_std, x) -> np.ndarray:
    """Diagonal-Gaussian log density, batched over leading axis."""
    mean = np.atleast_2d(mean)
    x = np.atleast_2d(x)
    z = (x - mean) / np.exp(log_std)
    return (
        -0.5 * (z**2).sum(axis=1)
        - log_std.sum()
        - 0.5 * mean.shape[1] * np.log(2.0 * np.pi)
    )


class DiagonalGaussianPolicy:
    """MLP mean plus a state-independent log-std vector.

    The output dimension is the action dimension for action-space masks
    and the latent (generator) dimension for the generator mask.
    """

    def __init__(
        self,
        obs_dim: int,
        out_dim: int,
        hidden_layers: int = 2,
        hidden_size: int = 32,
        activation: str = "relu",
        init_log_std: float = 0.0,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        sizes = [obs_dim] + [hidden_size] * hidden_layers + [out_dim]
        self.mlp = MLP(sizes, activation=activation, rng=rng, out_gain=0.01)
        self.log_std = np.full(out_dim, float(init_log_std))
        self.grad_log_std = np.zeros(out_dim)
        self.out_dim = out_dim
        self.obs_dim = obs_dim

    def mean(self, obs: np.ndarray, cache: bool = False) -> np.ndarray:
        return self.mlp.forward(obs, cache=cache)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        mu = self.mean(obs)[0]
        eps = rng.standard_normal(self.out_dim)
        return mu + self.std * eps, mu

    def entropy(self) -> float:
        """Closed-form entropy of the base Gaussian (per sample)."""
        return float(self.log_std.sum() + 0.5 * self.out_dim * (1.0 + np.log(2.0 * np.pi)))

    def zero_grads(self):
        self.mlp.zero_grads()
        self.grad_log_std[:] = 0.0

    def backward_mean(self, dmu: np.ndarray):
        self.mlp.backward(dmu)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.mlp.flat_params(), self.log_std])

    def set_flat_params(self, flat: np.ndarray):
        n = self.mlp.n_params
        self.mlp.set_flat_params(flat[:n])
        self.log_std = flat[n:].copy()

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([self.mlp.flat_grads(), self.grad_log_std])

    @property
    def n_params(self) -> int:
        return self.mlp.n_params + self.out_dim


class ValueNet:
    """Scalar state-value MLP."""

    def __init__(
        self,
        obs_dim: int,
        hidden_layers: int = 2,
        hidden_size: int = 32,
        activation: str = "relu",
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        sizes = [obs_dim] + [hidden_size] * hidden_layers + [1]
        self.mlp = MLP(sizes, activation=activation, rng=rng, out_gain=1.0)

    def value(self, obs: np.ndarray, cache: bool = False) -> np.ndarray:
        return self.mlp.forward(obs, cache=cache)[:, 0]

    def zero_grads(self):
        self.mlp.zero_grads()

    def backward(self, dv: np.ndarray):
        self.mlp.backward(np.asarray(dv, dtype=float).reshape(-1, 1))

    def flat_params(self) -> np.ndarray:
        return self.mlp.flat_params()

    def set_flat_params(self, flat: np.ndarray):
        self.mlp.set_flat_params(flat)

    def flat_grads(self) -> np.ndarray:
        return self.mlp.flat_grads()

    @property
    def n_params(self) -> int:
        return self.mlp.n_params
