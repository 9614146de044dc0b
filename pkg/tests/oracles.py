"""Independent reference implementations used to check the package.

Nothing here imports the code under test except plain data types.
"""

import itertools

import numpy as np


def dense_gp_posterior(X, y, Q, lengthscales, n_context, signal_variance, noise_variance):
    """Posterior mean/std from a direct dense solve of the GP equations."""
    X, Q = np.asarray(X, float), np.asarray(Q, float)
    ls = np.asarray(lengthscales, float)

    def k(A, B):
        out = signal_variance
        for sl in (slice(0, n_context), slice(n_context, None)):
            diff = (A[:, None, sl] - B[None, :, sl]) / ls[sl]
            r = np.sqrt(3.0 * np.sum(diff ** 2, axis=-1))
            out = out * (1.0 + r) * np.exp(-r)
        return out

    K = k(X, X) + noise_variance * np.eye(len(X))
    Kq = k(Q, X)
    mu = Kq @ np.linalg.solve(K, y)
    var = signal_variance - np.einsum("ij,ji->i", Kq, np.linalg.solve(K, Kq.T))
    return mu, np.sqrt(np.maximum(var, 0.0))


def brute_force_actions():
    """Alternating stance/flight schedules with 1, 3 or 5 phases, 3..6 nodes each."""
    out = []
    for n_phases in (1, 3, 5):
        for counts in itertools.product(range(3, 7), repeat=n_phases):
            out.append(tuple(counts) + (0,) * (5 - n_phases))
    return sorted(out)


def finite_difference_jacobian(f, x, h=1e-6):
    x = np.asarray(x, float)
    f0 = np.asarray(f(x))
    J = np.zeros(f0.shape + x.shape)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        J[..., i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return J


def eq3_merit(f, g, h, s1, s2, s3):
    g, h = np.asarray(g, float), np.asarray(h, float)
    return s1 * f + s2 * np.sum(g ** 2) + s3 * np.sum(np.maximum(h, 0.0) ** 2)
