"""Finite-difference validation of the hand-derived training gradient.

Each trial builds a random toy model and a couple of events, computes the
analytic gradient of the combined loss through the kernel backward pass, and
compares it against central differences of the forward loss over every
parameter coordinate.
"""

import numpy as np

from . import kernels, numerics

TOL = 1e-4
EPSILON = 1e-5


def _pack(user_emb, item_emb, gate_w, gate_b):
    return np.concatenate([user_emb.ravel(), item_emb.ravel(), gate_w, gate_b])


def _unpack(x, n_users, n_items, d):
    off = 0
    user_emb = x[off : off + n_users * d].reshape(n_users, d)
    off += n_users * d
    item_emb = x[off : off + n_items * d].reshape(n_items, d)
    off += n_items * d
    gate_w = x[off : off + 3 * d]
    off += 3 * d
    return user_emb, item_emb, gate_w, x[off]


def random_instance(rng):
    """Random toy sizes per the gradient-correctness gate: 3-10 users,
    5-20 items, d in {2, 8}; one event may have an empty recent set."""
    n_users = int(rng.integers(3, 11))
    n_items = int(rng.integers(5, 21))
    d = int(rng.choice([2, 8]))
    user_emb = rng.normal(0, 0.5, (n_users, d))
    item_emb = rng.normal(0, 0.5, (n_items, d))
    gate_w = rng.normal(0, 0.5, 3 * d)
    gate_b = rng.normal(0, 0.5, 1)
    beta = float(rng.uniform(0.0, 2.0))

    events = []
    for k in range(2):
        u = int(rng.integers(0, n_users))
        n_recent = int(rng.integers(0, 4)) if k == 0 else int(rng.integers(1, 4))
        recent = np.sort(rng.choice(n_items, size=n_recent, replace=False)).astype(np.int64)
        ctx = rng.integers(0, n_items, size=int(rng.integers(1, 5))).astype(np.int64)
        cand = np.unique(rng.choice(n_items, size=int(rng.integers(2, n_items + 1)), replace=False)).astype(np.int64)
        t_pos = int(rng.integers(0, cand.shape[0]))
        y_n = float(rng.integers(0, 2))
        y_m = float(rng.integers(0, 2))
        events.append((u, recent, ctx, cand, t_pos, y_n, y_m))
    return (n_users, n_items, d), (user_emb, item_emb, gate_w, gate_b), beta, events


def check_instance(shapes, params, beta, events, epsilon=EPSILON):
    """Max relative error between analytic and central-difference gradients."""
    n_users, n_items, d = shapes
    user_emb, item_emb, gate_w, gate_b = params
    weight = 1.0 / len(events)

    d_user = np.zeros_like(user_emb)
    d_item = np.zeros_like(item_emb)
    d_w = np.zeros_like(gate_w)
    d_b = np.zeros(1)
    for u, recent, ctx, cand, t_pos, y_n, y_m in events:
        kernels.event_loss_grad(
            item_emb, user_emb, gate_w, float(gate_b[0]), u, recent, ctx, cand,
            t_pos, y_n, y_m, beta, weight, d_item, d_user, d_w, d_b,
        )
    analytic = _pack(d_user, d_item, d_w, d_b)

    def f(x):
        ue, ie, gw, gb = _unpack(x, n_users, n_items, d)
        total = 0.0
        for u, recent, ctx, cand, t_pos, y_n, y_m in events:
            l1, l2 = kernels.event_loss(ie, ue, gw, float(gb), u, recent, ctx, cand, t_pos, y_n, y_m)
            total += weight * (l1 + beta * l2)
        return total

    x0 = _pack(user_emb, item_emb, gate_w, gate_b)
    return numerics.grad_check(f, x0, analytic, epsilon)


def run_suite(n_trials=20, seed=0, tol=TOL):
    """Run the full gradient suite.  Returns (errors, all_passed)."""
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_trials):
        shapes, params, beta, events = random_instance(rng)
        errors.append(check_instance(shapes, params, beta, events))
    return errors, all(e <= tol for e in errors)
