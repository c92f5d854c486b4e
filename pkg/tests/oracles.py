"""Independent reference computations shared by several test modules."""
import numpy as np

from concept_forge.learner import Batch, init_model, loss


def random_batch(rng, d_x, m, size=32):
    X = rng.standard_normal((size, d_x))
    env = np.arange(size) % m + 1
    y = (np.arange(size) // m) % 2
    return Batch(X, env, y.astype(float))


def perturbed_model(d_x, n, m, seed, hidden=(32, 32), structure=None):
    """Model with every head parameter moved off its initial value."""
    rng = np.random.default_rng(seed)
    model = init_model(d_x, n, m, rng, hidden, structure)
    for k in model.head_keys():
        model.params[k] = model.params[k] + 0.5 * rng.standard_normal(model.params[k].shape)
    return model


def kink_margin(model, X):
    """Smallest distance of any hidden pre-activation or ``beta`` entry from its kink at 0."""
    margin = min(np.min(np.abs(model.params[k])) for k in model.params if k.startswith("beta")
                 and model.params[k].size)
    a = X
    for l in range(model.n_layers - 1):
        z = a @ model.params[f"W{l}"].T + model.params[f"b{l}"]
        margin = min(margin, float(np.min(np.abs(z))))
        a = np.maximum(z, 0.2 * z)
    return margin


def finite_difference_grads(model, batch, l1_weight, step=None):
    """Central differences.  By default the step stays inside the differentiable
    region: with step <= margin / (2 (1 + max|x|)) no first-layer pre-activation
    or beta entry can be pushed across its kink."""
    if step is None:
        scale = 1.0 + float(np.max(np.abs(batch.X)))
        step = min(1e-5, kink_margin(model, batch.X) / (2.0 * scale))
    out = {}
    for k, v in model.params.items():
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            orig = v[idx]
            v[idx] = orig + step
            up = loss(model, batch, l1_weight)
            v[idx] = orig - step
            down = loss(model, batch, l1_weight)
            v[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out[k] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for k in analytic:
        a, f = analytic[k], numeric[k]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst
