"""Raw-log ingestion: parsing, activity filtering, sessionization, CV folds
and the COCOREC-DATA-v1 snapshot format.

Pipeline order is pinned: parse -> filter_inactive -> sessionize (which also
applies the session length filter).  filter_inactive iterates to a fixpoint
because removing items can push users below the threshold and vice versa.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, Interaction, Session

log = logging.getLogger(__name__)

DATA_MAGIC = "COCOREC-DATA-v1"


class IngestError(Exception):
    """Fatal ingestion failure (unreadable input, empty result)."""


@dataclass
class IngestConfig:
    gap_hours: float = 6.0
    min_interactions: int = 10
    min_session_len: int = 2
    max_session_len: int = 20
    n_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.gap_hours <= 0:
            raise ValueError("gap_hours must be > 0")
        if self.min_session_len < 2:
            raise ValueError("min_session_len must be >= 2")
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")


@dataclass
class FoldSplit:
    fold: int
    train_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)


def parse_log(path, delimiter=None):
    """Parse a (user, item, unix_seconds) text log into a dense Dataset.

    Delimiter is auto-detected (tab, else comma) unless given.  Malformed
    rows are counted and skipped; an optional header row is tolerated.
    Returns (dataset, n_skipped).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc

    user_index = {}
    item_index = {}
    user_vocab = []
    item_vocab = []
    rows = []
    skipped = 0
    first_data_row = True
    for line in lines:
        line = line.rstrip("\n")
        if not line.strip():
            continue
        sep = delimiter or ("\t" if "\t" in line else ",")
        parts = [p.strip() for p in line.split(sep)]
        if len(parts) != 3:
            skipped += 1
            continue
        try:
            ts = int(float(parts[2]))
        except ValueError:
            if first_data_row:
                first_data_row = False  # header
                continue
            skipped += 1
            continue
        first_data_row = False
        u_ext, i_ext = parts[0], parts[1]
        if u_ext not in user_index:
            user_index[u_ext] = len(user_vocab)
            user_vocab.append(u_ext)
        if i_ext not in item_index:
            item_index[i_ext] = len(item_vocab)
            item_vocab.append(i_ext)
        rows.append((user_index[u_ext], item_index[i_ext], ts))

    if not rows:
        raise IngestError(f"no valid rows in {path}")

    interactions = defaultdict(list)
    for u, i, ts in rows:
        interactions[u].append(Interaction(u, i, ts))
    for u in interactions:
        interactions[u].sort(key=lambda it: it.timestamp)  # stable: input order on ties
    return Dataset(user_vocab=user_vocab, item_vocab=item_vocab, interactions=dict(interactions)), skipped


def filter_inactive(dataset, min_interactions=10):
    """Drop users/items with fewer than min_interactions, to a fixpoint.

    Vocabularies are re-densified; session lists are not carried over (they
    are built afterwards by sessionize).
    """
    rows = [it for its in dataset.interactions.values() for it in its]
    while True:
        user_count = Counter(it.user_id for it in rows)
        item_count = Counter(it.item_id for it in rows)
        keep_users = {u for u, c in user_count.items() if c >= min_interactions}
        keep_items = {i for i, c in item_count.items() if c >= min_interactions}
        new_rows = [it for it in rows if it.user_id in keep_users and it.item_id in keep_items]
        if len(new_rows) == len(rows):
            break
        rows = new_rows
    if not rows:
        raise IngestError("all interactions removed by the activity filter")

    old_users = sorted({it.user_id for it in rows})
    old_items = sorted({it.item_id for it in rows})
    user_map = {old: new for new, old in enumerate(old_users)}
    item_map = {old: new for new, old in enumerate(old_items)}
    interactions = defaultdict(list)
    for it in rows:
        interactions[user_map[it.user_id]].append(
            Interaction(user_map[it.user_id], item_map[it.item_id], it.timestamp)
        )
    return Dataset(
        user_vocab=[dataset.user_vocab[u] for u in old_users],
        item_vocab=[dataset.item_vocab[i] for i in old_items],
        interactions=dict(interactions),
    )


def sessionize(dataset, gap_hours=6.0, min_len=2, max_len=20):
    """Split each user's interaction stream into sessions on time gaps.

    Consecutive interactions with a gap < gap_hours stay together; a gap of
    exactly gap_hours (or more) starts a new session.  Sessions shorter than
    min_len or longer than max_len are dropped afterwards.
    """
    gap = gap_hours * 3600.0
    sessions = []
    sid = 0
    for u in sorted(dataset.interactions):
        its = dataset.interactions[u]
        start = 0
        for k in range(1, len(its) + 1):
            if k == len(its) or its[k].timestamp - its[k - 1].timestamp >= gap:
                chunk = its[start:k]
                if min_len <= len(chunk) <= max_len:
                    sessions.append(
                        Session(
                            session_id=sid,
                            user_id=u,
                            items=tuple(it.item_id for it in chunk),
                            start_time=chunk[0].timestamp,
                            end_time=chunk[-1].timestamp,
                        )
                    )
                    sid += 1
                start = k
    return sessions


def _coverage_repair(sessions_by_id, train_ids, test_ids, entity_freq):
    """Greedily move test sessions to train until every user/item of the
    dataset that occurs in any session occurs in a training session.

    Repair order is rarest entity first (deterministic tie-breaks).
    """
    train_ids = list(train_ids)
    test_ids = list(test_ids)
    while True:
        covered = set()
        for sid in train_ids:
            s = sessions_by_id[sid]
            covered.add(("u", s.user_id))
            covered.update(("i", v) for v in s.items)
        missing = []
        for sid in test_ids:
            s = sessions_by_id[sid]
            for ent in [("u", s.user_id)] + [("i", v) for v in s.items]:
                if ent not in covered:
                    missing.append(ent)
        if not missing:
            break
        missing = sorted(set(missing), key=lambda e: (entity_freq[e], e))
        ent = missing[0]
        candidates = [
            sid
            for sid in test_ids
            if ent == ("u", sessions_by_id[sid].user_id) or ent[0] == "i" and ent[1] in sessions_by_id[sid].items
        ]
        moved = min(candidates)
        log.info("fold coverage: moving session %d to train for %s", moved, ent)
        test_ids.remove(moved)
        train_ids.append(moved)
    return sorted(train_ids), sorted(test_ids)


def make_folds(sessions, n_folds=5, seed=0):
    """Randomly partition sessions into n_folds CV splits.

    Each fold uses one part as test and the rest as train, then repairs the
    split so train covers every user and item, and finally draws half of the
    remaining test sessions as the validation set (with the fold seed).
    """
    if not sessions:
        raise IngestError("cannot build folds from zero sessions")
    sessions_by_id = {s.session_id: s for s in sessions}
    entity_freq = Counter()
    for s in sessions:
        entity_freq[("u", s.user_id)] += 1
        for v in s.items:
            entity_freq[("i", v)] += 1

    rng = np.random.default_rng(seed)
    order = [sessions[i].session_id for i in rng.permutation(len(sessions))]
    parts = [order[k::n_folds] for k in range(n_folds)]

    folds = []
    for k in range(n_folds):
        test_ids = sorted(parts[k])
        train_ids = sorted(sid for j, part in enumerate(parts) if j != k for sid in part)
        train_ids, test_ids = _coverage_repair(sessions_by_id, train_ids, test_ids, entity_freq)
        fold_rng = np.random.default_rng([seed, k])
        n_val = len(test_ids) // 2
        val_ids = sorted(fold_rng.choice(test_ids, size=n_val, replace=False).tolist()) if n_val else []
        folds.append(FoldSplit(fold=k, train_ids=train_ids, test_ids=test_ids, val_ids=val_ids))
    return folds


# ---------------------------------------------------------------------------
# COCOREC-DATA-v1 snapshot (line-based, tab-separated)
# ---------------------------------------------------------------------------

def save_snapshot(path, dataset, folds=None):
    folds = folds or []
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DATA_MAGIC + "\n")
        fh.write(f"users\t{dataset.n_users}\n")
        for ext in dataset.user_vocab:
            fh.write(f"{ext}\n")
        fh.write(f"items\t{dataset.n_items}\n")
        for ext in dataset.item_vocab:
            fh.write(f"{ext}\n")
        fh.write(f"interactions\t{dataset.n_interactions}\n")
        for u in sorted(dataset.interactions):
            for it in dataset.interactions[u]:
                fh.write(f"{it.user_id}\t{it.item_id}\t{it.timestamp}\n")
        fh.write(f"sessions\t{len(dataset.sessions)}\n")
        for s in dataset.sessions:
            items = ",".join(str(v) for v in s.items)
            fh.write(f"{s.session_id}\t{s.user_id}\t{s.start_time}\t{s.end_time}\t{items}\n")
        fh.write(f"folds\t{len(folds)}\n")
        for f in folds:
            fh.write(f"fold\t{f.fold}\n")
            fh.write("train\t" + ",".join(str(i) for i in f.train_ids) + "\n")
            fh.write("test\t" + ",".join(str(i) for i in f.test_ids) + "\n")
            fh.write("val\t" + ",".join(str(i) for i in f.val_ids) + "\n")


def load_snapshot(path):
    """Load a COCOREC-DATA-v1 snapshot.  Returns (dataset, folds)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != DATA_MAGIC:
        raise IngestError(f"{path}: not a {DATA_MAGIC} snapshot")
    pos = 1

    def expect(tag):
        nonlocal pos
        name, count = lines[pos].split("\t")
        if name != tag:
            raise IngestError(f"{path}: expected section {tag!r}, found {name!r}")
        pos += 1
        return int(count)

    n = expect("users")
    user_vocab = lines[pos : pos + n]
    pos += n
    n = expect("items")
    item_vocab = lines[pos : pos + n]
    pos += n
    n = expect("interactions")
    interactions = defaultdict(list)
    for _ in range(n):
        u, i, ts = (int(x) for x in lines[pos].split("\t"))
        interactions[u].append(Interaction(u, i, ts))
        pos += 1
    n = expect("sessions")
    sessions = []
    for _ in range(n):
        sid, uid, start, end, items = lines[pos].split("\t")
        sessions.append(
            Session(
                session_id=int(sid),
                user_id=int(uid),
                items=tuple(int(v) for v in items.split(",")),
                start_time=int(start),
                end_time=int(end),
            )
        )
        pos += 1
    n = expect("folds")
    folds = []
    for _ in range(n):
        fold_idx = int(lines[pos].split("\t")[1])
        pos += 1
        ids = {}
        for tag in ("train", "test", "val"):
            name, _, payload = lines[pos].partition("\t")
            if name != tag:
                raise IngestError(f"{path}: expected fold section {tag!r}")
            ids[tag] = [int(x) for x in payload.split(",")] if payload else []
            pos += 1
        folds.append(FoldSplit(fold=fold_idx, train_ids=ids["train"], test_ids=ids["test"], val_ids=ids["val"]))
    dataset = Dataset(
        user_vocab=user_vocab,
        item_vocab=item_vocab,
        interactions=dict(interactions),
        sessions=sessions,
    )
    return dataset, folds


def prepare(raw_path, config):
    """Full ingest pipeline: parse -> filter -> sessionize -> folds.

    Returns (dataset_with_sessions, folds, n_skipped_rows).
    """
    dataset, skipped = parse_log(raw_path)
    dataset = filter_inactive(dataset, config.min_interactions)
    sessions = sessionize(dataset, config.gap_hours, config.min_session_len, config.max_session_len)
    if not sessions:
        raise IngestError("no sessions survive filtering")
    dataset.sessions = sessions
    folds = make_folds(sessions, config.n_folds, config.seed)
    return dataset, folds, skipped
