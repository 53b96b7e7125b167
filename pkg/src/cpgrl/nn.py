"""Minimal fully-connected network with analytic backprop, plus Adam.

Kept in plain numpy: networks here are tiny, training must be bit-reproducible
across runs and resume, and every gradient is checked against central finite
differences in the test suite.
"""

import numpy as np


class DimensionMismatch(ValueError):
    pass


def elu(x):
    return np.where(x > 0.0, x, np.expm1(x))


def elu_grad(x):
    return np.where(x > 0.0, 1.0, np.exp(x))


class Mlp:
    """Affine layers with ELU on hidden layers and a linear output head."""

    def __init__(self, sizes, rng: np.random.Generator, out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_in, n_out))
            if i == len(sizes) - 2:
                w = w * out_scale
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise DimensionMismatch(f"input width {x.shape[-1]} != {self.sizes[0]}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < self.n_layers - 1:
                x = elu(x)
        return x

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping pre-activations for backward()."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise DimensionMismatch(f"input width {x.shape[-1]} != {self.sizes[0]}")
        inputs = [x]
        pres = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = inputs[-1] @ w + b
            pres.append(pre)
            if i < self.n_layers - 1:
                inputs.append(elu(pre))
        return pres[-1], (inputs, pres)

    def backward(self, cache, grad_out: np.ndarray):
        """Parameter gradients for a batch; grad_out is dLoss/d(output).

        Returns ([dW...], [db...]); batch items are summed, so the caller
        bakes any 1/N into grad_out.
        """
        inputs, pres = cache
        grad_ws = [None] * self.n_layers
        grad_bs = [None] * self.n_layers
        g = np.asarray(grad_out, dtype=float)
        for i in range(self.n_layers - 1, -1, -1):
            if i < self.n_layers - 1:
                g = g * elu_grad(pres[i])
            x = inputs[i]
            grad_ws[i] = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grad_bs[i] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return grad_ws, grad_bs

    # ---- flat parameter plumbing (Adam, checkpoints)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        return np.concatenate(
            [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        )

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise DimensionMismatch(f"expected {self.n_params} params, got {flat.size}")
        offset = 0
        for i, w in enumerate(self.weights):
            self.weights[i] = flat[offset : offset + w.size].reshape(w.shape).copy()
            offset += w.size
        for i, b in enumerate(self.biases):
            self.biases[i] = flat[offset : offset + b.size].copy()
            offset += b.size

    def flat_grads(self, grad_ws, grad_bs) -> np.ndarray:
        return np.concatenate(
            [g.ravel() for g in grad_ws] + [g.ravel() for g in grad_bs]
        )


class RunningNorm:
    """Per-dimension running mean/variance normalizer (Welford batches).

    Updated on rollout batches during training, frozen at evaluation; keeps
    the 61 mixed-scale observation slots comparable for the tiny networks.
    """

    def __init__(self, dim: int, clip: float = 10.0, eps: float = 1e-8):
        self.dim = dim
        self.clip = clip
        self.eps = eps
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=float).reshape(-1, self.dim)
        n = batch.shape[0]
        if n == 0:
            return
        batch_mean = batch.mean(axis=0)
        batch_var = batch.var(axis=0)
        total = self.count + n
        delta = batch_mean - self.mean
        new_mean = self.mean + delta * (n / total)
        m_a = self.var * self.count
        m_b = batch_var * n
        new_var = (m_a + m_b + delta * delta * (self.count * n / total)) / total
        self.mean = new_mean
        self.var = new_var
        self.count = total

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return np.asarray(obs, dtype=float)
        std = np.sqrt(self.var + self.eps)
        return np.clip((obs - self.mean) / std, -self.clip, self.clip)

    def state_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.copy(), "var": self.var.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.count = float(state["count"])
        self.mean = np.asarray(state["mean"], dtype=float).copy()
        self.var = np.asarray(state["var"], dtype=float).copy()


class Adam:
    """Adaptive-moment gradient descent on a flat parameter vector."""

    def __init__(self, n_params: int, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t, "lr": self.lr}

    def load_state_dict(self, state: dict) -> None:
        self.m = np.asarray(state["m"], dtype=float).copy()
        self.v = np.asarray(state["v"], dtype=float).copy()
        self.t = int(state["t"])
        self.lr = float(state["lr"])
