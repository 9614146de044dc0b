"""Exact GP regression over (context, action) pairs.

The covariance is a product of two unit-variance ARD Matern-3/2 factors,
one on the context coordinates and one on the action slots, scaled by a
single signal variance. The prior mean is zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

FORMAT_VERSION = 1
SQRT3 = np.sqrt(3.0)
JITTER_START = 1e-10
JITTER_MAX = 1e-6


class GpError(ValueError):
    pass


@dataclass(frozen=True)
class KernelParams:
    context_lengthscales: tuple
    action_lengthscales: tuple = (1.5,) * 5
    signal_variance: float = 0.25
    noise_variance: float = 1e-4

    def __post_init__(self):
        ctx = tuple(float(v) for v in np.atleast_1d(self.context_lengthscales))
        act = tuple(float(v) for v in np.atleast_1d(self.action_lengthscales))
        object.__setattr__(self, "context_lengthscales", ctx)
        object.__setattr__(self, "action_lengthscales", act)
        if any(not np.isfinite(v) or v <= 0 for v in ctx + act):
            raise GpError("lengthscales must be positive")
        if not self.signal_variance > 0:
            raise GpError("signal variance must be positive")
        if not self.noise_variance >= 0:
            raise GpError("noise variance must be non-negative")

    @property
    def n_context(self) -> int:
        return len(self.context_lengthscales)

    @property
    def dim(self) -> int:
        return len(self.context_lengthscales) + len(self.action_lengthscales)

    @property
    def lengthscales(self) -> np.ndarray:
        return np.array(self.context_lengthscales + self.action_lengthscales)


def default_kernel_params(n_terrain: int = 0, goal_lengthscale: float = 0.15,
                          terrain_lengthscale: float = 0.1, action_lengthscale: float = 1.5,
                          signal_variance: float = 0.25, noise_variance: float = 1e-4) -> KernelParams:
    return KernelParams((goal_lengthscale,) + (terrain_lengthscale,) * n_terrain,
                        (action_lengthscale,) * 5, signal_variance, noise_variance)


def matern32(r2):
    """Unit-variance Matern-3/2 of an ARD-weighted squared distance."""
    r2 = np.asarray(r2, dtype=float)
    if np.any(r2 < 0):
        raise GpError("squared distance must be non-negative")
    r = SQRT3 * np.sqrt(r2)
    return (1.0 + r) * np.exp(-r)


def _sq_dist(A, B, ls):
    # column-wise differences: exact zeros on coincident points, and cheap
    # because the input dimension is small
    d2 = np.zeros((len(A), len(B)))
    for j in range(A.shape[1]):
        diff = (A[:, j, None] - B[None, :, j]) / ls[j]
        d2 += diff * diff
    return d2


def kernel_matrix(A, B, params: KernelParams) -> np.ndarray:
    """Product kernel between the rows of ``A`` and ``B`` (encoded pairs)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != params.dim or B.shape[1] != params.dim:
        raise GpError(f"expected {params.dim} input columns")
    nc = params.n_context
    ls = params.lengthscales
    kc = matern32(_sq_dist(A[:, :nc], B[:, :nc], ls[:nc]))
    ka = matern32(_sq_dist(A[:, nc:], B[:, nc:], ls[nc:]))
    return params.signal_variance * kc * ka


def encode(context, action) -> np.ndarray:
    """Concatenate context coordinates and action slots into one input row."""
    return np.concatenate([np.asarray(context.as_array(), dtype=float),
                           np.asarray(action.as_array(), dtype=float)])


def pair_kernel(x, x2, params: KernelParams) -> float:
    """Kernel between two (context, action) pairs or two encoded rows."""
    a = encode(*x) if isinstance(x, tuple) else np.asarray(x, dtype=float)
    b = encode(*x2) if isinstance(x2, tuple) else np.asarray(x2, dtype=float)
    if a.shape != (params.dim,) or b.shape != (params.dim,):
        raise GpError("pair dimension does not match the kernel")
    return float(kernel_matrix(a[None], b[None], params)[0, 0])


def _factorize(K):
    """Cholesky factor with escalating diagonal jitter; returns (L, jitter)."""
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(len(K)) if jitter else K)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise GpError("kernel matrix not positive definite after jitter") from None


class GpState:
    """Observations, kernel parameters and the cached Cholesky factor."""

    def __init__(self, params: KernelParams, X=None, m=None):
        self.params = params
        self.X = np.zeros((0, params.dim)) if X is None else np.atleast_2d(np.asarray(X, float))
        self.m = np.zeros(0) if m is None else np.asarray(m, dtype=float).ravel()
        if self.X.shape[0] != len(self.m):
            raise GpError("X and m lengths differ")
        if self.X.shape[1] != params.dim:
            raise GpError(f"expected {params.dim} input columns")
        self.jitter = 0.0
        self._action_cache = {}
        self._refactor()

    @property
    def n(self) -> int:
        return len(self.m)

    def _refactor(self):
        if self.n == 0:
            self.L = np.zeros((0, 0))
            self.alpha = np.zeros(0)
            return
        K = kernel_matrix(self.X, self.X, self.params)
        K[np.diag_indices_from(K)] += self.params.noise_variance
        self.L, self.jitter = _factorize(K)
        self.alpha = cho_solve((self.L, True), self.m)

    def add_observation(self, x, m: float) -> "GpState":
        """Append one observation and extend the factor in place."""
        row = encode(*x) if isinstance(x, tuple) else np.asarray(x, dtype=float).ravel()
        if row.shape != (self.params.dim,):
            raise GpError("observation dimension does not match the kernel")
        if not abs(m) < 1:
            raise GpError("refined merits must lie in (-1, 1)")
        k = kernel_matrix(self.X, row[None], self.params)[:, 0] if self.n else np.zeros(0)
        kss = self.params.signal_variance + self.params.noise_variance + self.jitter
        self.X = np.vstack([self.X, row])
        self.m = np.append(self.m, float(m))
        if self.n == 1:
            d2 = kss
            l = np.zeros(0)
        else:
            l = solve_triangular(self.L, k, lower=True)
            d2 = kss - l @ l
        if d2 <= 1e-12 * kss:
            self._refactor()
            return self
        L = np.zeros((self.n, self.n))
        L[:-1, :-1] = self.L
        L[-1, :-1] = l
        L[-1, -1] = np.sqrt(d2)
        self.L = L
        self.alpha = cho_solve((self.L, True), self.m)
        return self

    def posterior(self, queries):
        """Posterior mean and standard deviation at encoded query rows."""
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        if Q.shape[1] != self.params.dim:
            raise GpError("query dimension does not match the kernel")
        prior = self.params.signal_variance
        if self.n == 0:
            return np.zeros(len(Q)), np.full(len(Q), np.sqrt(prior))
        Kq = kernel_matrix(Q, self.X, self.params)
        mu = Kq @ self.alpha
        v = solve_triangular(self.L, Kq.T, lower=True)
        var = prior - np.sum(v * v, axis=0)
        return mu, np.sqrt(np.maximum(var, 0.0))

    def posterior_mean(self, queries) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        if Q.shape[1] != self.params.dim:
            raise GpError("query dimension does not match the kernel")
        if self.n == 0:
            return np.zeros(len(Q))
        return kernel_matrix(Q, self.X, self.params) @ self.alpha

    # -- shared-context queries ----------------------------------------------
    def _action_factor(self, actions: np.ndarray) -> np.ndarray:
        """Action-kernel factor between candidate rows and all observations.

        Observations are only ever appended, so the cached block just grows.
        """
        key = id(actions)
        nc = self.params.n_context
        cached = self._action_cache.get(key)
        if cached is None or cached[0] is not actions:
            cached = (actions, np.zeros((len(actions), 0)))
        block = cached[1]
        if block.shape[1] < self.n:
            ls = self.params.lengthscales[nc:]
            new = matern32(_sq_dist(actions, self.X[block.shape[1]:, nc:], ls))
            block = np.hstack([block, new])
            self._action_cache[key] = (actions, block)
        return block[:, :self.n]

    def shared_context_posterior(self, context_row, actions: np.ndarray, std: bool = True):
        """Posterior at every action row paired with one context.

        Same result as :meth:`posterior` on the stacked rows, but the product
        kernel lets the context factor collapse to one vector.
        """
        ctx = np.asarray(context_row, dtype=float).reshape(1, -1)
        nc = self.params.n_context
        if ctx.shape[1] != nc or actions.shape[1] != self.params.dim - nc:
            raise GpError("query dimension does not match the kernel")
        prior = self.params.signal_variance
        if self.n == 0:
            mu = np.zeros(len(actions))
            return (mu, np.full(len(actions), np.sqrt(prior))) if std else mu
        kc = matern32(_sq_dist(ctx, self.X[:, :nc], self.params.lengthscales[:nc]))[0]
        Kq = self._action_factor(actions) * (prior * kc)[None, :]
        mu = Kq @ self.alpha
        if not std:
            return mu
        v = solve_triangular(self.L, Kq.T, lower=True, check_finite=False)
        var = prior - np.sum(v * v, axis=0)
        return mu, np.sqrt(np.maximum(var, 0.0))

    # -- persistence --------------------------------------------------------
    def to_dict(self) -> dict:
        p = self.params
        return {
            "format_version": FORMAT_VERSION,
            "kernel": {
                "context_lengthscales": list(p.context_lengthscales),
                "action_lengthscales": list(p.action_lengthscales),
                "signal_variance": p.signal_variance,
                "noise_variance": p.noise_variance,
            },
            "X": self.X.tolist(),
            "m": self.m.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GpState":
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise GpError(f"unsupported model format_version {version!r}")
        try:
            kern = data["kernel"]
            params = KernelParams(tuple(kern["context_lengthscales"]),
                                  tuple(kern["action_lengthscales"]),
                                  float(kern["signal_variance"]), float(kern["noise_variance"]))
            X = np.asarray(data["X"], dtype=float).reshape(-1, params.dim)
            return cls(params, X, np.asarray(data["m"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, GpError):
                raise
            raise GpError(f"malformed model: {exc}") from exc


def save_model(gp: GpState, path) -> None:
    Path(path).write_text(json.dumps(gp.to_dict()))


def load_model(path) -> GpState:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GpError(f"{path}: not a JSON model ({exc})") from exc
    return GpState.from_dict(data)
