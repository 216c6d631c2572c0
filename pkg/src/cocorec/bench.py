"""Benchmark the numba kernels against the pure-numpy fallback.

Run with:  python -m cocorec.bench
"""

import time

import numpy as np

from .kernels import _numpy_impl


def _setup(n_users=200, n_items=300, d=50, n_cand=200, seed=0):
    rng = np.random.default_rng(seed)
    user_emb = rng.normal(0, 0.1, (n_users, d))
    item_emb = rng.normal(0, 0.1, (n_items, d))
    gate_w = rng.normal(0, 0.1, 3 * d)
    recent = np.sort(rng.choice(n_items, size=10, replace=False)).astype(np.int64)
    ctx = rng.integers(0, n_items, size=5).astype(np.int64)
    cand = np.sort(rng.choice(n_items, size=n_cand, replace=False)).astype(np.int64)
    return user_emb, item_emb, gate_w, recent, ctx, cand


def _time_backend(mod, reps=2000):
    user_emb, item_emb, gate_w, recent, ctx, cand = _setup()
    d_item = np.zeros_like(item_emb)
    d_user = np.zeros_like(user_emb)
    d_w = np.zeros_like(gate_w)
    d_b = np.zeros(1)
    args = (item_emb, user_emb, gate_w, 0.0, 3, recent, ctx, cand, 7, 1.0, 0.0, 1.0, 1.0, d_item, d_user, d_w, d_b)
    mod.event_loss_grad(*args)  # warm-up / JIT compile
    t0 = time.perf_counter()
    for _ in range(reps):
        mod.event_loss_grad(*args)
    grad_us = (time.perf_counter() - t0) / reps * 1e6

    catalog = np.arange(item_emb.shape[0], dtype=np.int64)
    h_m, h_n = mod.encode_event(item_emb, user_emb, 3, recent, ctx)
    mod.gate_scores(item_emb, catalog, h_m, h_n, gate_w, 0.0)
    t0 = time.perf_counter()
    for _ in range(reps):
        mod.gate_scores(item_emb, catalog, h_m, h_n, gate_w, 0.0)
    score_us = (time.perf_counter() - t0) / reps * 1e6
    return grad_us, score_us


def main():
    results = {"numpy": _time_backend(_numpy_impl)}
    try:
        from .kernels import _numba_impl

        results["numba"] = _time_backend(_numba_impl)
    except ImportError:
        print("numba not available; benchmarking the numpy fallback only")

    print(f"{'backend':<10}{'event_loss_grad':>18}{'catalog_scoring':>18}")
    for name, (g, s) in results.items():
        print(f"{name:<10}{g:>14.1f} us{s:>14.1f} us")
    if "numba" in results:
        g_np, s_np = results["numpy"]
        g_nb, s_nb = results["numba"]
        print(f"{'speedup':<10}{g_np / g_nb:>16.1f}x{s_np / s_nb:>17.1f}x")


if __name__ == "__main__":
    main()
