"""Numba backend: loop-level @njit versions of the kernels in _numpy_impl.

Semantics must match _numpy_impl exactly (same clamp bounds, same fallbacks);
tests/test_kernels.py cross-checks the two backends on random instances.
"""

import numpy as np
from numba import njit

PROB_EPS = 1e-12


@njit(cache=True)
def softmax(x):
    m = x[0]
    for i in range(1, x.shape[0]):
        if x[i] > m:
            m = x[i]
    e = np.empty_like(x)
    s = 0.0
    for i in range(x.shape[0]):
        e[i] = np.exp(x[i] - m)
        s += e[i]
    return e / s


@njit(cache=True)
def _attn(q, K):
    d = q.shape[0]
    n = K.shape[0]
    scores = np.empty(n)
    inv = 1.0 / np.sqrt(d)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += K[i, j] * q[j]
        scores[i] = acc * inv
    alpha = softmax(scores)
    out = np.zeros(d)
    for i in range(n):
        for j in range(d):
            out[j] += alpha[i] * K[i, j]
    return alpha, out


@njit(cache=True)
def encode_event(item_emb, user_emb, u, recent, ctx):
    d = item_emb.shape[1]
    if recent.shape[0] == 0:
        h_n = user_emb[u].copy()
    else:
        K = item_emb[recent]
        _, h_n = _attn(user_emb[u], K)
    C = item_emb[ctx]
    q = np.zeros(d)
    for i in range(C.shape[0]):
        for j in range(d):
            q[j] += C[i, j]
    q /= C.shape[0]
    _, h_m = _attn(q, C)
    return h_m, h_n


@njit(cache=True)
def gate_scores(item_emb, cand, h_m, h_n, gate_w, gate_b):
    d = h_m.shape[0]
    m = cand.shape[0]
    gm = 0.0
    gn = 0.0
    for j in range(d):
        gm += gate_w[j] * h_m[j]
        gn += gate_w[d + j] * h_n[j]
    lam = np.empty(m)
    scores = np.empty(m)
    for i in range(m):
        v = cand[i]
        z = gm + gn + gate_b
        a = 0.0
        b = 0.0
        for j in range(d):
            e = item_emb[v, j]
            z += gate_w[2 * d + j] * e
            a += e * h_n[j]
            b += e * h_m[j]
        lv = 1.0 / (1.0 + np.exp(-z))
        lam[i] = lv
        scores[i] = lv * a + (1.0 - lv) * b
    return lam, scores


@njit(cache=True)
def _l1_value(probs, t_pos):
    total = 0.0
    for i in range(probs.shape[0]):
        p = probs[i]
        if p < PROB_EPS:
            p = PROB_EPS
        elif p > 1.0 - PROB_EPS:
            p = 1.0 - PROB_EPS
        if i == t_pos:
            total += np.log(p)
        else:
            total += np.log(1.0 - p)
    return -total


@njit(cache=True)
def _l2_value(lam_t, y_n, y_m):
    lt = lam_t
    if lt < PROB_EPS:
        lt = PROB_EPS
    elif lt > 1.0 - PROB_EPS:
        lt = 1.0 - PROB_EPS
    return -(y_n * np.log(lt) + (1.0 - y_n) * np.log(1.0 - lt)) - (
        y_m * np.log(1.0 - lt) + (1.0 - y_m) * np.log(lt)
    )


@njit(cache=True)
def event_loss(item_emb, user_emb, gate_w, gate_b, u, recent, ctx, cand, t_pos, y_n, y_m):
    h_m, h_n = encode_event(item_emb, user_emb, u, recent, ctx)
    lam, scores = gate_scores(item_emb, cand, h_m, h_n, gate_w, gate_b)
    probs = softmax(scores)
    return _l1_value(probs, t_pos), _l2_value(lam[t_pos], y_n, y_m)


@njit(cache=True)
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
    d = item_emb.shape[1]
    sqrt_d = np.sqrt(d)
    m = cand.shape[0]

    # ---- forward ----
    e_u = user_emb[u]
    use_attn_n = recent.shape[0] > 0
    if use_attn_n:
        K_r = item_emb[recent]
        alpha_n, h_n = _attn(e_u, K_r)
    else:
        K_r = item_emb[:0]
        alpha_n = np.zeros(0)
        h_n = e_u.copy()
    C = item_emb[ctx]
    q_m = np.zeros(d)
    for i in range(C.shape[0]):
        for j in range(d):
            q_m[j] += C[i, j]
    q_m /= C.shape[0]
    alpha_m, h_m = _attn(q_m, C)

    gm = 0.0
    gn = 0.0
    for j in range(d):
        gm += gate_w[j] * h_m[j]
        gn += gate_w[d + j] * h_n[j]
    lam = np.empty(m)
    a = np.empty(m)
    b = np.empty(m)
    scores = np.empty(m)
    for i in range(m):
        v = cand[i]
        z = gm + gn + gate_b
        ai = 0.0
        bi = 0.0
        for j in range(d):
            e = item_emb[v, j]
            z += gate_w[2 * d + j] * e
            ai += e * h_n[j]
            bi += e * h_m[j]
        lv = 1.0 / (1.0 + np.exp(-z))
        lam[i] = lv
        a[i] = ai
        b[i] = bi
        scores[i] = lv * ai + (1.0 - lv) * bi
    probs = softmax(scores)

    l1 = _l1_value(probs, t_pos)
    l2 = _l2_value(lam[t_pos], y_n, y_m)

    # ---- backward ----
    g = np.empty(m)
    for i in range(m):
        p = probs[i]
        if p < PROB_EPS or p > 1.0 - PROB_EPS:
            g[i] = 0.0
        elif i == t_pos:
            g[i] = -1.0 / p
        else:
            g[i] = 1.0 / (1.0 - p)
        g[i] *= weight

    dot = 0.0
    for i in range(m):
        dot += probs[i] * g[i]
    ds = np.empty(m)
    for i in range(m):
        ds[i] = probs[i] * (g[i] - dot)

    d_lam = np.empty(m)
    for i in range(m):
        d_lam[i] = ds[i] * (a[i] - b[i])
    lt = lam[t_pos]
    if lt >= PROB_EPS and lt <= 1.0 - PROB_EPS:
        dl2_dlam = (
            -y_n / lt + (1.0 - y_n) / (1.0 - lt) + y_m / (1.0 - lt) - (1.0 - y_m) / lt
        )
        d_lam[t_pos] += weight * beta * dl2_dlam

    dz_sum = 0.0
    d_h_n = np.zeros(d)
    d_h_m = np.zeros(d)
    for i in range(m):
        lv = lam[i]
        dzi = d_lam[i] * lv * (1.0 - lv)
        dz_sum += dzi
        v = cand[i]
        for j in range(d):
            e = item_emb[v, j]
            d_item[v, j] += ds[i] * (lv * h_n[j] + (1.0 - lv) * h_m[j]) + dzi * gate_w[2 * d + j]
            d_h_n[j] += ds[i] * lv * e
            d_h_m[j] += ds[i] * (1.0 - lv) * e
            d_w[2 * d + j] += dzi * e
    for j in range(d):
        d_h_n[j] += dz_sum * gate_w[d + j]
        d_h_m[j] += dz_sum * gate_w[j]
        d_w[j] += dz_sum * h_m[j]
        d_w[d + j] += dz_sum * h_n[j]
    d_b[0] += dz_sum

    # ---- attention backward: ISC encoder ----
    nc = ctx.shape[0]
    d_alpha = np.empty(nc)
    for i in range(nc):
        acc = 0.0
        for j in range(d):
            acc += C[i, j] * d_h_m[j]
        d_alpha[i] = acc
    adot = 0.0
    for i in range(nc):
        adot += alpha_m[i] * d_alpha[i]
    dq = np.zeros(d)
    for i in range(nc):
        du = alpha_m[i] * (d_alpha[i] - adot)
        v = ctx[i]
        for j in range(d):
            dq[j] += du * C[i, j] / sqrt_d
            d_item[v, j] += alpha_m[i] * d_h_m[j] + du * q_m[j] / sqrt_d
    for i in range(nc):
        v = ctx[i]
        for j in range(d):
            d_item[v, j] += dq[j] / nc

    # ---- attention backward: OSC encoder ----
    if use_attn_n:
        nr = recent.shape[0]
        d_alpha_n = np.empty(nr)
        for i in range(nr):
            acc = 0.0
            for j in range(d):
                acc += K_r[i, j] * d_h_n[j]
            d_alpha_n[i] = acc
        adot = 0.0
        for i in range(nr):
            adot += alpha_n[i] * d_alpha_n[i]
        for i in range(nr):
            du = alpha_n[i] * (d_alpha_n[i] - adot)
            v = recent[i]
            for j in range(d):
                d_user[u, j] += du * K_r[i, j] / sqrt_d
                d_item[v, j] += alpha_n[i] * d_h_n[j] + du * e_u[j] / sqrt_d
    else:
        for j in range(d):
            d_user[u, j] += d_h_n[j]

    return l1, l2
