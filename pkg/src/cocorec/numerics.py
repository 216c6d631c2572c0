"""Dense numeric primitives: attention, its exact backward pass, a central
finite-difference gradient checker, the Adam optimizer and Xavier init.

Vectors and matrices are plain float64 numpy arrays.  These functions are the
slow, obviously-correct reference route; the training loop goes through
:mod:`cocorec.kernels` and is cross-checked against this module and against
finite differences.
"""

from dataclasses import dataclass, field

import numpy as np

SOFTMAX_TOL = 1e-9


def softmax(x):
    """Stable softmax with max subtraction."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x)
    e = np.exp(x - m)
    return e / np.sum(e)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class AttnTrace:
    """Inputs and cached activations of one attention call."""

    query: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    alpha: np.ndarray
    output: np.ndarray


def attention(q, K, V):
    """Scaled dot-product attention: softmax(K q / sqrt(d)) weighted sum of V.

    K and V must have the same row count kappa >= 1; refuses empty inputs
    (callers provide their own degenerate fallbacks).
    """
    q = np.asarray(q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if K.shape[0] == 0:
        raise ValueError("attention requires at least one key")
    if K.shape != V.shape or K.shape[1] != q.shape[0]:
        raise ValueError(f"shape mismatch: q {q.shape}, K {K.shape}, V {V.shape}")
    d = q.shape[0]
    scores = K @ q / np.sqrt(d)
    alpha = softmax(scores)
    return AttnTrace(query=q, keys=K, values=V, alpha=alpha, output=alpha @ V)


def attention_backward(trace, d_output):
    """Exact reverse-mode gradients of attention w.r.t. (q, K, V)."""
    d_output = np.asarray(d_output, dtype=np.float64)
    if d_output.shape != trace.output.shape:
        raise ValueError("d_output shape does not match attention output")
    q, K, V, alpha = trace.query, trace.keys, trace.values, trace.alpha
    d = q.shape[0]
    d_V = alpha[:, None] * d_output
    d_alpha = V @ d_output
    d_scores = alpha * (d_alpha - np.dot(alpha, d_alpha))
    d_q = (d_scores @ K) / np.sqrt(d)
    d_K = d_scores[:, None] * q / np.sqrt(d)
    return d_q, d_K, d_V


def grad_check(f, x, analytic_grad, epsilon=1e-5):
    """Max relative error between analytic_grad and central differences of f.

    f takes a flat parameter vector; the relative error per coordinate is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not 0.0 < epsilon <= 1e-3:
        raise ValueError("epsilon must be in (0, 1e-3]")
    x = np.asarray(x, dtype=np.float64)
    analytic_grad = np.asarray(analytic_grad, dtype=np.float64)
    worst = 0.0
    for i in range(x.shape[0]):
        xp = x.copy()
        xp[i] += epsilon
        fp = f(xp)
        xp[i] -= 2.0 * epsilon
        fm = f(xp)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite loss at coordinate {i}")
        numeric = (fp - fm) / (2.0 * epsilon)
        a = analytic_grad[i]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    """First/second moment buffers, one pair per named parameter block."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
    """One in-place Adam update over a dict of named parameter arrays.

    Blocks whose gradient contains non-finite entries are skipped; the list
    of skipped block names is returned.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    b1, b2 = betas
    state.t += 1
    t = state.t
    skipped = []
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            skipped.append(name)
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return skipped


def xavier_init(rows, cols, seed):
    """Uniform Xavier/Glorot init in +-sqrt(6 / (rows + cols)), seeded."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))
