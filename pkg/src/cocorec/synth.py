"""Synthetic session data with planted causes.

The catalog splits into "primary" items, partitioned into preference
clusters, and "accessory" items that are only ever reached through item
transitions.  Every interaction is produced by exactly one of three
mechanisms and labeled with it:

  OSC      draw a primary item from the user's preference cluster, with
           user-specific Dirichlet weights (so users revisit favorites),
  ISC      follow the transition partner of the previous item in the
           session; partners are always accessory items (camera -> lens)
           and the partner map rotates with the confounder windows, so a
           transition keeps pointing at fresh accessories over the year,
  CONFOUND pick one of the two primary items promoted by the confounder
           event whose time window covers the session (e.g. a simultaneous
           discount); the pair spans two clusters and is never a true
           transition, so the induced co-occurrence is spurious.

Confounder windows tile the whole timeline, so a confound draw is always
possible and the pair changes when the window closes.  Timestamps are spaced
so that the standard 6-hour sessionizer reconstructs the generated sessions.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, Interaction
from .ingest import sessionize

OSC, ISC, CONFOUND = "OSC", "ISC", "CONFOUND"

DAY = 86400
TIMELINE = 360 * DAY
SESSION_STEP = 120  # seconds between interactions inside one session


@dataclass
class SynthConfig:
    n_users: int = 200
    n_items: int = 300
    n_sessions: int = 5000
    confound_rate: float = 0.3
    isc_rate: float = 0.4
    osc_rate: float = 0.3
    n_item_clusters: int = 10
    n_confounder_events: int = 6
    accessory_frac: float = 0.5
    preference_alpha: float = 0.3  # Dirichlet concentration of per-user cluster tastes
    transition_blocks: int = 12  # how often the transition-partner map rotates
    min_session_len: int = 3
    max_session_len: int = 8
    seed: int = 0

    def __post_init__(self):
        rates = (self.confound_rate, self.isc_rate, self.osc_rate)
        if any(r < 0 for r in rates) or abs(sum(rates) - 1.0) > 1e-9:
            raise ValueError("mechanism rates must be >= 0 and sum to 1")
        if min(self.n_users, self.n_items, self.n_sessions, self.n_item_clusters,
               self.n_confounder_events, self.transition_blocks) < 1:
            raise ValueError("counts must be >= 1")
        if not 0.0 < self.accessory_frac < 1.0:
            raise ValueError("accessory_frac must be in (0, 1)")
        n_primary = self.n_items - max(1, int(self.n_items * self.accessory_frac))
        if self.n_item_clusters > n_primary:
            raise ValueError("more clusters than primary items")
        if not 2 <= self.min_session_len <= self.max_session_len <= 20:
            raise ValueError("session length bounds must fit 2..20")


@dataclass
class SynthDataset:
    dataset: Dataset
    labels: dict  # (session_id, position) -> mechanism tag
    config: SynthConfig
    user_cluster: np.ndarray = None
    item_cluster: np.ndarray = None
    partner: np.ndarray = None


def generate(config):
    """Generate a labeled synthetic dataset; byte-identical for a fixed seed."""
    rng = np.random.default_rng(config.seed)
    n_items = config.n_items
    n_accessory = max(1, int(n_items * config.accessory_frac))
    n_primary = n_items - n_accessory

    # primaries occupy [0, n_primary) and carry a cluster; accessories get -1
    cluster_of = np.full(n_items, -1)
    cluster_of[:n_primary] = np.arange(n_primary) % config.n_item_clusters
    cluster_items = [np.where(cluster_of == c)[0] for c in range(config.n_item_clusters)]
    user_cluster = rng.integers(0, config.n_item_clusters, size=config.n_users)
    user_taste = [
        rng.dirichlet(np.full(len(cluster_items[user_cluster[u]]), config.preference_alpha))
        for u in range(config.n_users)
    ]

    # every item transitions to an accessory (never itself); the map is
    # redrawn per time block so targets stay novel across the year
    n_blocks = config.transition_blocks
    block_len = TIMELINE / n_blocks
    partner = n_primary + rng.integers(0, n_accessory, size=(n_blocks, n_items))
    for w in range(n_blocks):
        for i in range(n_primary, n_items):
            if partner[w, i] == i:
                partner[w, i] = n_primary + (i - n_primary + 1) % n_accessory

    window_len = TIMELINE / config.n_confounder_events
    pairs = []
    for _ in range(config.n_confounder_events):
        while True:
            x, y = rng.integers(0, n_primary, size=2)
            if x != y and cluster_of[x] != cluster_of[y]:
                pairs.append((int(x), int(y)))
                break

    per_user = np.full(config.n_users, config.n_sessions // config.n_users)
    per_user[: config.n_sessions % config.n_users] += 1

    rates = np.array([config.confound_rate, config.isc_rate, config.osc_rate])
    mech_names = [CONFOUND, ISC, OSC]

    interactions = {}
    labels_per_user = {}
    for u in range(config.n_users):
        n_s = int(per_user[u])
        spacing = TIMELINE / (n_s + 1)
        its = []
        labs = []
        for j in range(n_s):
            start = int((j + 0.5) * spacing + rng.uniform(-0.2, 0.2) * spacing)
            start = max(0, min(start, TIMELINE - 1))
            window = min(int(start // window_len), config.n_confounder_events - 1)
            block = min(int(start // block_len), n_blocks - 1)
            wx, wy = pairs[window]
            length = int(rng.integers(config.min_session_len, config.max_session_len + 1))
            mechs = rng.choice(3, size=length, p=rates)
            prev = -1
            sess_items = set()
            for pos in range(length):
                mech = int(mechs[pos])
                if mech == 0:  # confound: prefer the pair item not yet in session
                    fresh = [w for w in (wx, wy) if w not in sess_items]
                    item = fresh[int(rng.integers(0, len(fresh)))] if fresh else (wx if rng.random() < 0.5 else wy)
                elif mech == 1:  # isc
                    src = prev if prev >= 0 else int(rng.integers(0, n_items))
                    item = int(partner[block, src])
                else:  # osc
                    pool = cluster_items[user_cluster[u]]
                    item = int(rng.choice(pool, p=user_taste[u]))
                its.append(Interaction(u, item, start + pos * SESSION_STEP))
                labs.append(mech_names[mech])
                prev = item
                sess_items.add(item)
        interactions[u] = its
        labels_per_user[u] = labs

    dataset = Dataset(
        user_vocab=[str(u) for u in range(config.n_users)],
        item_vocab=[str(i) for i in range(n_items)],
        interactions=interactions,
    )
    dataset.sessions = sessionize(dataset, gap_hours=6.0, min_len=2, max_len=20)

    labels = {}
    cursor = {u: 0 for u in interactions}
    for s in dataset.sessions:
        ptr = cursor[s.user_id]
        for pos in range(len(s.items)):
            labels[(s.session_id, pos)] = labels_per_user[s.user_id][ptr + pos]
        cursor[s.user_id] = ptr + len(s.items)

    return SynthDataset(
        dataset=dataset,
        labels=labels,
        config=config,
        user_cluster=user_cluster,
        item_cluster=cluster_of,
        partner=partner,
    )


def save_labels(path, synth):
    with open(path, "w", encoding="utf-8") as fh:
        for (sid, pos), lab in sorted(synth.labels.items()):
            fh.write(f"{sid},{pos},{lab}\n")


def load_labels(path):
    labels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            sid, pos, lab = line.strip().split(",")
            labels[(int(sid), int(pos))] = lab
    return labels


def _auc(values, labels01):
    """Rank AUC (Mann-Whitney with average ranks for ties)."""
    values = np.asarray(values, dtype=np.float64)
    labels01 = np.asarray(labels01)
    n1 = int(np.sum(labels01 == 1))
    n0 = labels01.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC undefined: all labels identical")
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    r1 = float(np.sum(ranks[labels01 == 1]))
    return (r1 - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def cause_auc(params, synth, events):
    """AUC of the trained gate weight against the planted causes.

    For each event the gate is evaluated at the true target; ground truth is
    1 for OSC or CONFOUND targets (outer-session causes) and 0 for ISC.
    """
    from . import brm as brm_mod

    lams = []
    labs = []
    for ev in events:
        # target position inside its session = context length
        lab = synth.labels[(ev.session_id, len(ev.ctx))]
        trace = brm_mod.score_event(params, ev.user_id, ev.recent, ev.ctx, np.asarray([ev.target], dtype=np.int64))
        lams.append(float(trace.lam[0]))
        labs.append(0 if lab == ISC else 1)
    return _auc(lams, labs)
