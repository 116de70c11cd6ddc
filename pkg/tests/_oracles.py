"""Independent numerical references shared by the test modules."""

import numpy as np


def fd_grad(f, theta, h=1e-5):
    """Central differences of scalar f() w.r.t. the array theta (perturbed in place)."""
    g = np.zeros_like(theta)
    theta, flat_g = theta.reshape(-1), g.reshape(-1)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        fp = f()
        theta[i] = old - h
        fm = f()
        theta[i] = old
        flat_g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)
