"""Independent reference computations shared by unit and acceptance tests."""

import numpy as np

from hybridlab.fnn import init_model, mse_loss, normalize


def random_network(rng, max_layers=3, max_units=16):
    """Random small net: 1..max_layers weight layers, each width <= max_units."""
    n_layers = int(rng.integers(1, max_layers + 1))
    sizes = [int(rng.integers(1, max_units + 1)) for _ in range(n_layers + 1)]
    mean = rng.normal(size=sizes[0])
    std = rng.uniform(0.5, 2.0, size=sizes[0])
    tstats = (rng.normal(size=sizes[-1]), rng.uniform(0.5, 2.0, size=sizes[-1]))
    model = init_model(sizes, seed=int(rng.integers(1 << 30)), norm_stats=(mean, std), target_stats=tstats)
    for b in model.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    return model


def min_abs_preactivation(model, X):
    a = normalize(model.norm_stats, X)
    smallest = np.inf
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ W.T + b
        smallest = min(smallest, float(np.min(np.abs(z))))
        a = np.maximum(z, 0.0)
    return smallest


def kink_free_batch(model, rng, n, margin=1e-4, tries=1000):
    """Batch whose hidden pre-activations all stay at least ``margin`` from 0."""
    for _ in range(tries):
        X = model.norm_stats[0] + model.norm_stats[1] * rng.normal(size=(n, model.n_inputs))
        if min_abs_preactivation(model, X) >= margin:
            return X
    raise RuntimeError("could not sample a kink-free batch")


def finite_difference_gradient(model, X, Y, h=1e-5):
    """Central differences of mse_loss for every weight and bias."""
    grads = []
    for group in (model.weights, model.biases):
        out = []
        for P in group:
            G = np.zeros_like(P)
            for idx in np.ndindex(P.shape):
                orig = P[idx]
                P[idx] = orig + h
                up = mse_loss(model, X, Y)
                P[idx] = orig - h
                down = mse_loss(model, X, Y)
                P[idx] = orig
                G[idx] = (up - down) / (2.0 * h)
            out.append(G)
        grads.append(out)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for A, N in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(A), np.abs(N)), floor)
        worst = max(worst, float(np.max(np.abs(A - N) / denom)))
    return worst


# acceptance criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}
