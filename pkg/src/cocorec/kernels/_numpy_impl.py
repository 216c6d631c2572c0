"""Pure-numpy reference backend for the hot per-event kernels.

The math here is the single source of truth; the numba backend mirrors it
loop-for-loop.  All arrays are float64, item/user indices int64.

Model recap for one prediction event:

    h_n = attention(e_u, E[R], E[R])          (falls back to e_u when R is empty)
    h_m = attention(mean(E[c]), E[c], E[c])
    z_v = w_m.h_m + w_n.h_n + w_v.e_v + b     (gate_w split in concat order h_m,h_n,e_v)
    lam_v = sigmoid(z_v)
    s_v = lam_v * (e_v.h_n) + (1 - lam_v) * (e_v.h_m)
    p = softmax(s)

    l1 = -[log p_t + sum_{j != t} log(1 - p_j)]        (p clamped to [1e-12, 1-1e-12])
    l2 = BCE(lam_t, y_n) + BCE(1 - lam_t, y_m)         (standard negated BCE)

The backward pass is hand-derived reverse mode of exactly these formulas and
is validated against central finite differences in the test suite.
"""

import numpy as np

PROB_EPS = 1e-12


def softmax(x):
    """Numerically stable softmax (max subtraction)."""
    m = np.max(x)
    e = np.exp(x - m)
    return e / np.sum(e)


def _attn(q, K):
    """Self-valued attention: keys double as values.  Returns (alpha, out)."""
    d = q.shape[0]
    scores = K @ q / np.sqrt(d)
    alpha = softmax(scores)
    return alpha, alpha @ K


def encode_event(item_emb, user_emb, u, recent, ctx):
    """Encode one event into its cause representations (h_m, h_n)."""
    if recent.shape[0] == 0:
        h_n = user_emb[u].copy()
    else:
        _, h_n = _attn(user_emb[u], item_emb[recent])
    C = item_emb[ctx]
    q = C.mean(axis=0)
    _, h_m = _attn(q, C)
    return h_m, h_n


def gate_scores(item_emb, cand, h_m, h_n, gate_w, gate_b):
    """Per-candidate gate weight and fused score.  Returns (lam, scores)."""
    d = h_m.shape[0]
    E = item_emb[cand]
    z = E @ gate_w[2 * d :] + gate_w[:d] @ h_m + gate_w[d : 2 * d] @ h_n + gate_b
    lam = 1.0 / (1.0 + np.exp(-z))
    a = E @ h_n
    b = E @ h_m
    return lam, lam * a + (1.0 - lam) * b


def _l1_value(probs, t_pos):
    pc = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    total = np.log(pc[t_pos]) - np.log(1.0 - pc[t_pos]) + np.sum(np.log(1.0 - pc))
    return -total


def _l2_value(lam_t, y_n, y_m):
    lt = min(max(lam_t, PROB_EPS), 1.0 - PROB_EPS)
    return -(y_n * np.log(lt) + (1.0 - y_n) * np.log(1.0 - lt)) - (
        y_m * np.log(1.0 - lt) + (1.0 - y_m) * np.log(lt)
    )


def event_loss(item_emb, user_emb, gate_w, gate_b, u, recent, ctx, cand, t_pos, y_n, y_m):
    """Forward-only per-event losses (l1, l2); the finite-difference target."""
    h_m, h_n = encode_event(item_emb, user_emb, u, recent, ctx)
    lam, scores = gate_scores(item_emb, cand, h_m, h_n, gate_w, gate_b)
    probs = softmax(scores)
    return _l1_value(probs, t_pos), _l2_value(lam[t_pos], y_n, y_m)


def event_loss_grad(
    item_emb,
    user_emb,
    gate_w,
    gate_b,
    u,
    recent,
    ctx,
    cand,
    t_pos,
    y_n,
    y_m,
    beta,
    weight,
    d_item,
    d_user,
    d_w,
    d_b,
):
    """Forward + hand-derived backward for weight * (l1 + beta * l2).

    Gradients are accumulated in place into the dense buffers d_item, d_user,
    d_w and d_b (a length-1 array).  Returns the unweighted (l1, l2) pair.
    """
    d = item_emb.shape[1]
    sqrt_d = np.sqrt(d)
    w_m = gate_w[:d]
    w_n = gate_w[d : 2 * d]
    w_v = gate_w[2 * d :]

    # ---- forward, keeping what the backward pass needs ----
    e_u = user_emb[u]
    use_attn_n = recent.shape[0] > 0
    if use_attn_n:
        K_r = item_emb[recent]
        alpha_n, h_n = _attn(e_u, K_r)
    else:
        h_n = e_u.copy()
    C = item_emb[ctx]
    q_m = C.mean(axis=0)
    alpha_m, h_m = _attn(q_m, C)

    E = item_emb[cand]
    z = E @ w_v + w_m @ h_m + w_n @ h_n + gate_b
    lam = 1.0 / (1.0 + np.exp(-z))
    a = E @ h_n
    b = E @ h_m
    scores = lam * a + (1.0 - lam) * b
    probs = softmax(scores)

    l1 = _l1_value(probs, t_pos)
    l2 = _l2_value(lam[t_pos], y_n, y_m)

    # ---- backward ----
    # d(l1)/d(probs), zero where the clamp binds.
    g = np.where(
        (probs >= PROB_EPS) & (probs <= 1.0 - PROB_EPS),
        1.0 / (1.0 - np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)),
        0.0,
    )
    pt = probs[t_pos]
    if PROB_EPS <= pt <= 1.0 - PROB_EPS:
        g[t_pos] = -1.0 / pt
    else:
        g[t_pos] = 0.0
    g *= weight

    # softmax jacobian
    ds = probs * (g - np.dot(probs, g))

    d_lam = ds * (a - b)
    # l2 touches lam only at the target candidate.
    lt = lam[t_pos]
    if PROB_EPS <= lt <= 1.0 - PROB_EPS:
        dl2_dlam = (
            -y_n / lt
            + (1.0 - y_n) / (1.0 - lt)
            + y_m / (1.0 - lt)
            - (1.0 - y_m) / lt
        )
        d_lam[t_pos] += weight * beta * dl2_dlam

    dz = d_lam * lam * (1.0 - lam)

    # candidate embeddings: direct score term + gate term
    dE = ds[:, None] * (lam[:, None] * h_n + (1.0 - lam)[:, None] * h_m) + dz[:, None] * w_v
    np.add.at(d_item, cand, dE)

    d_h_n = E.T @ (ds * lam) + np.sum(dz) * w_n
    d_h_m = E.T @ (ds * (1.0 - lam)) + np.sum(dz) * w_m

    d_w[:d] += np.sum(dz) * h_m
    d_w[d : 2 * d] += np.sum(dz) * h_n
    d_w[2 * d :] += E.T @ dz
    d_b[0] += np.sum(dz)

    # ---- attention backward: ISC encoder (q is the context mean) ----
    dV = alpha_m[:, None] * d_h_m
    d_alpha = C @ d_h_m
    du = alpha_m * (d_alpha - np.dot(alpha_m, d_alpha))
    dq = (du @ C) / sqrt_d
    dK = du[:, None] * q_m / sqrt_d
    dC = dV + dK + dq / ctx.shape[0]
    np.add.at(d_item, ctx, dC)

    # ---- attention backward: OSC encoder (q is the user embedding) ----
    if use_attn_n:
        dV = alpha_n[:, None] * d_h_n
        d_alpha = K_r @ d_h_n
        du = alpha_n * (d_alpha - np.dot(alpha_n, d_alpha))
        d_user[u] += (du @ K_r) / sqrt_d
        dKr = dV + du[:, None] * e_u / sqrt_d
        np.add.at(d_item, recent, dKr)
    else:
        d_user[u] += d_h_n

    return l1, l2
