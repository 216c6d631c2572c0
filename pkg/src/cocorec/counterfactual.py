"""Counterfactual collaborative inference on top of a trained base model.

For a target event we retrieve the training sessions whose recent-interaction
sets are most Jaccard-similar, re-run the base model with the target's
context substituted for each neighbor's (keeping the neighbor's user and
recent set), aggregate the resulting distributions by similarity, and apply
an additive boost to recently seen items before ranking.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .brm import score_items
from .core import recent_set


@dataclass
class CocoConfig:
    pi: int = 10
    epsilon: float = 0.1
    exclude_same_user: bool = False

    def __post_init__(self):
        if self.pi < 1:
            raise ValueError("pi must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


class Neighbor(NamedTuple):
    session_id: int
    user_id: int
    recent: tuple
    similarity: float


@dataclass
class NeighborSet:
    session_id: int  # target session
    neighbors: list = field(default_factory=list)  # similarity-descending


def jaccard(a, b):
    """|A n B| / |A u B|; 0 when both sets are empty."""
    a = set(a)
    b = set(b)
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


class NeighborIndex:
    """Inverted index item -> sessions over the candidate pool's recent sets.

    Only sessions sharing at least one recent item with the query are scored,
    so zero-similarity sessions never surface.
    """

    def __init__(self, pool_sessions, histories, recent_cap=10):
        self.sessions = []
        self.by_item = defaultdict(list)
        for s in pool_sessions:
            rec = recent_set(histories.get(s.user_id, []), s.start_time, recent_cap)
            idx = len(self.sessions)
            self.sessions.append(Neighbor(s.session_id, s.user_id, rec, 0.0))
            for v in rec:
                self.by_item[v].append(idx)

    def find_neighbors(self, event, pi, exclude_same_user=False):
        """Top-pi pool sessions by recent-set Jaccard, excluding the target
        session itself; ties break toward the smaller session id."""
        query = set(event.recent)
        seen = set()
        scored = []
        for v in query:
            for idx in self.by_item.get(v, ()):
                if idx in seen:
                    continue
                seen.add(idx)
                cand = self.sessions[idx]
                if cand.session_id == event.session_id:
                    continue
                if exclude_same_user and cand.user_id == event.user_id:
                    continue
                sim = jaccard(query, cand.recent)
                if sim > 0.0:
                    scored.append(Neighbor(cand.session_id, cand.user_id, cand.recent, sim))
        scored.sort(key=lambda n: (-n.similarity, n.session_id))
        return NeighborSet(session_id=event.session_id, neighbors=scored[:pi])


class CocoRecommender:
    """Counterfactual inference engine bound to trained params and a pool.

    Neighbor OSC encodings depend only on the pool, so they are computed once
    up front; per-event work is one ISC encoding plus pi catalog scorings.
    """

    def __init__(self, params, pool_sessions, histories, config=None, recent_cap=10):
        self.params = params
        self.config = config or CocoConfig()
        self.index = NeighborIndex(pool_sessions, histories, recent_cap)
        self.catalog = np.arange(params.item_emb.shape[0], dtype=np.int64)
        self._h_n = {}
        for nb in self.index.sessions:
            self._h_n[nb.session_id] = self._encode_osc(nb.user_id, nb.recent)

    def _encode_osc(self, user_id, recent):
        rec = np.asarray(recent, dtype=np.int64)
        ctx_dummy = np.zeros(1, dtype=np.int64)
        h_m, h_n = kernels.encode_event(self.params.item_emb, self.params.user_emb, int(user_id), rec, ctx_dummy)
        return h_n

    def _encode_isc(self, ctx):
        ctx = np.asarray(ctx, dtype=np.int64)
        rec_dummy = np.zeros(0, dtype=np.int64)
        h_m, _ = kernels.encode_event(self.params.item_emb, self.params.user_emb, 0, rec_dummy, ctx)
        return h_m

    def action(self, event, neighbor):
        """Probability over the catalog with the target's ISC substituted
        into the neighbor's forward pass."""
        h_m = self._encode_isc(event.ctx)
        h_n = self._h_n.get(neighbor.session_id)
        if h_n is None:
            h_n = self._encode_osc(neighbor.user_id, neighbor.recent)
        return score_items(self.params, h_m, h_n, self.catalog).probs

    def brm_probs(self, event):
        """The base model's own prediction (no substitution)."""
        h_m = self._encode_isc(event.ctx)
        h_n = self._encode_osc(event.user_id, event.recent)
        return score_items(self.params, h_m, h_n, self.catalog).probs

    def aggregate(self, event, neighbor_set=None):
        """Similarity-weighted mixture of per-neighbor action outputs; falls
        back to the base model's own prediction when no neighbor exists."""
        if neighbor_set is None:
            neighbor_set = self.index.find_neighbors(event, self.config.pi, self.config.exclude_same_user)
        if not neighbor_set.neighbors:
            return self.brm_probs(event)
        h_m = self._encode_isc(event.ctx)
        total = np.zeros(self.catalog.shape[0])
        norm = 0.0
        for nb in neighbor_set.neighbors:
            h_n = self._h_n.get(nb.session_id)
            if h_n is None:
                h_n = self._encode_osc(nb.user_id, nb.recent)
            probs = score_items(self.params, h_m, h_n, self.catalog).probs
            total += nb.similarity * probs
            norm += nb.similarity
        return total / norm

    def boost(self, p_coco, event, epsilon=None):
        """Additively emphasize items of R(s) u c, then renormalize."""
        eps = self.config.epsilon if epsilon is None else epsilon
        boosted = sorted(set(event.recent.tolist()) | set(event.ctx.tolist()))
        out = p_coco.copy()
        if eps > 0 and boosted:
            out[np.asarray(boosted, dtype=np.int64)] += eps
            out /= 1.0 + eps * len(boosted)
        return out

    def scores(self, event):
        """Full pipeline probabilities (aggregate + boost) over the catalog."""
        return self.boost(self.aggregate(event), event)

    def recommend(self, event, k):
        """Top-k items of the boosted aggregate; ties break to smaller id."""
        p = self.scores(event)
        order = np.lexsort((np.arange(p.shape[0]), -p))
        return [(int(v), float(p[v])) for v in order[:k]]
