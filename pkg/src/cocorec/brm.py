"""Base recommendation model: two attention encoders, a sigmoid cause gate,
fused per-candidate scoring, the combined loss and the training loop.

The public ops (encode_osc, encode_isc, gate_lambda, score_items, the two
losses) are thin reference implementations over :mod:`cocorec.numerics`;
training and bulk scoring dispatch to :mod:`cocorec.kernels` for speed.  Both
routes compute the same math and the tests pin them together.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels, numerics
from .core import expand_events, prior_items

BRM_MAGIC = b"COCOREC-BRM-v1"
PROB_EPS = 1e-12


@dataclass
class BrmConfig:
    d: int = 50
    lr: float = 0.01
    beta: float = 1.0
    max_epochs: int = 50
    batch_size: int = 128
    recent_cap: int = 10
    patience: int = 5
    seed: int = 0
    optimizer: str = "adam"  # adam is the default; sgd kept as an escape hatch

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass
class BrmParams:
    """Everything the optimizer touches."""

    user_emb: np.ndarray  # |U| x d
    item_emb: np.ndarray  # |V| x d
    gate_w: np.ndarray  # 3d (concat order: h_m, h_n, e_v)
    gate_b: np.ndarray  # shape (1,)

    @property
    def d(self):
        return self.item_emb.shape[1]

    @classmethod
    def init(cls, n_users, n_items, d, seed=0):
        rng = np.random.default_rng(seed)
        return cls(
            user_emb=numerics.xavier_init(n_users, d, rng),
            item_emb=numerics.xavier_init(n_items, d, rng),
            gate_w=np.zeros(3 * d),
            gate_b=np.zeros(1),
        )

    def copy(self):
        return BrmParams(
            self.user_emb.copy(), self.item_emb.copy(), self.gate_w.copy(), self.gate_b.copy()
        )

    def as_dict(self):
        return {
            "user_emb": self.user_emb,
            "item_emb": self.item_emb,
            "gate_w": self.gate_w,
            "gate_b": self.gate_b,
        }

    def save(self, path, user_vocab=None, item_vocab=None):
        n_users, d = self.user_emb.shape
        n_items = self.item_emb.shape[0]
        vocab = {"users": list(user_vocab or []), "items": list(item_vocab or [])}
        with open(path, "wb") as fh:
            fh.write(BRM_MAGIC + b"\n")
            fh.write(struct.pack("<qqq", d, n_users, n_items))
            fh.write(np.ascontiguousarray(self.user_emb, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(self.item_emb, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(self.gate_w, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(self.gate_b, dtype=np.float64).tobytes())
            fh.write(json.dumps(vocab).encode("utf-8"))

    @classmethod
    def load(cls, path):
        """Returns (params, vocab_dict)."""
        with open(path, "rb") as fh:
            blob = fh.read()
        head = BRM_MAGIC + b"\n"
        if not blob.startswith(head):
            raise ValueError(f"{path}: not a {BRM_MAGIC.decode()} checkpoint")
        off = len(head)
        d, n_users, n_items = struct.unpack_from("<qqq", blob, off)
        off += 24

        def take(count):
            nonlocal off
            arr = np.frombuffer(blob, dtype=np.float64, count=count, offset=off).copy()
            off += count * 8
            return arr

        user_emb = take(n_users * d).reshape(n_users, d)
        item_emb = take(n_items * d).reshape(n_items, d)
        gate_w = take(3 * d)
        gate_b = take(1)
        vocab = json.loads(blob[off:].decode("utf-8"))
        return cls(user_emb, item_emb, gate_w, gate_b), vocab


@dataclass
class ForwardTrace:
    """Cached activations of one scoring pass over a candidate set."""

    candidates: np.ndarray
    h_m: np.ndarray
    h_n: np.ndarray
    lam: np.ndarray
    scores: np.ndarray
    probs: np.ndarray


class PseudoLabels(NamedTuple):
    y_n: int
    y_m: int


@dataclass
class LossBreakdown:
    l1: float
    l2: float
    beta: float

    @property
    def total(self):
        return self.l1 + self.beta * self.l2


# ---------------------------------------------------------------------------
# forward ops (reference route)
# ---------------------------------------------------------------------------

def encode_osc(params, user_id, recent):
    """Dynamic-preference encoding; falls back to the user embedding when the
    recent set is empty (attention over zero keys is undefined)."""
    e_u = params.user_emb[user_id]
    if len(recent) == 0:
        return e_u.copy()
    E = params.item_emb[np.asarray(recent, dtype=np.int64)]
    return numerics.attention(e_u, E, E).output


def encode_isc(params, context):
    if len(context) == 0:
        raise ValueError("context must be non-empty")
    E = params.item_emb[np.asarray(context, dtype=np.int64)]
    return numerics.attention(E.mean(axis=0), E, E).output


def gate_lambda(params, h_m, h_n, item_id):
    x = np.concatenate([h_m, h_n, params.item_emb[item_id]])
    return float(numerics.sigmoid(np.dot(params.gate_w, x) + params.gate_b[0]))


def score_items(params, h_m, h_n, candidates):
    """Per-candidate gate, fused representation and softmax probabilities."""
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.shape[0] == 0:
        raise ValueError("candidate set must be non-empty")
    lam, scores = kernels.gate_scores(params.item_emb, cand, h_m, h_n, params.gate_w, float(params.gate_b[0]))
    return ForwardTrace(
        candidates=cand, h_m=h_m, h_n=h_n, lam=lam, scores=scores, probs=kernels.softmax(scores)
    )


def loss_l1(probs, t_pos):
    """Per-event in-batch cross entropy with log(1-p) terms, clamped."""
    pc = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(np.log(pc[t_pos]) - np.log(1.0 - pc[t_pos]) + np.sum(np.log(1.0 - pc))))


def pseudo_labels(event, user_history):
    """Cause pseudo-labels: y_n = target seen before, y_m = target in context.

    'Seen before' covers all interactions strictly before the session start
    plus the earlier items of the current session (the context).
    """
    v_u = prior_items(user_history, event.start_time) | set(event.context)
    return PseudoLabels(y_n=int(event.target in v_u), y_m=int(event.target in event.context))


def loss_l2(lam_t, labels):
    """Self-supervised gate loss: BCE(lam, y_n) + BCE(1-lam, y_m)."""
    lt = min(max(lam_t, PROB_EPS), 1.0 - PROB_EPS)
    y_n, y_m = labels
    bce_n = -(y_n * np.log(lt) + (1 - y_n) * np.log(1.0 - lt))
    bce_m = -(y_m * np.log(1.0 - lt) + (1 - y_m) * np.log(lt))
    return float(bce_n + bce_m)


def score_event(params, user_id, recent, ctx, candidates=None):
    """Fast full forward for one event; candidates defaults to the catalog."""
    recent = np.asarray(recent, dtype=np.int64)
    ctx = np.asarray(ctx, dtype=np.int64)
    h_m, h_n = kernels.encode_event(params.item_emb, params.user_emb, int(user_id), recent, ctx)
    if candidates is None:
        candidates = np.arange(params.item_emb.shape[0], dtype=np.int64)
    return score_items(params, h_m, h_n, candidates)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class EventData(NamedTuple):
    """One prediction event flattened into kernel-ready arrays."""

    user_id: int
    recent: np.ndarray
    ctx: np.ndarray
    target: int
    y_n: float
    y_m: float
    session_id: int
    session_len: int


def prepare_events(dataset, session_ids):
    """Expand the given sessions into kernel-ready events with pseudo-labels."""
    by_id = {s.session_id: s for s in dataset.sessions}
    sessions = [by_id[sid] for sid in session_ids]
    lens = {s.session_id: len(s.items) for s in sessions}
    out = []
    for ev in expand_events(sessions, dataset.interactions):
        labels = pseudo_labels(ev, dataset.interactions.get(ev.user_id, []))
        out.append(
            EventData(
                user_id=ev.user_id,
                recent=np.asarray(ev.recent, dtype=np.int64),
                ctx=np.asarray(ev.context, dtype=np.int64),
                target=ev.target,
                y_n=float(labels.y_n),
                y_m=float(labels.y_m),
                session_id=ev.session_id,
                session_len=lens[ev.session_id],
            )
        )
    return out


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # (epoch, l1, l2, val_r20)
    best_epoch: int = -1
    best_val_r20: float = -1.0
    diverged: bool = False
    config: BrmConfig = None

    def to_text(self):
        lines = [f"# training report ({'diverged' if self.diverged else 'completed'})"]
        if self.config is not None:
            lines.append(f"# config: {self.config}")
        lines.append("epoch\tl1\tl2\tval_r20")
        for epoch, l1, l2, r20 in self.epochs:
            lines.append(f"{epoch}\t{l1:.6f}\t{l2:.6f}\t{r20:.4f}")
        lines.append(f"best_epoch\t{self.best_epoch}\tbest_val_r20\t{self.best_val_r20:.4f}")
        return "\n".join(lines) + "\n"


class TrainingDiverged(Exception):
    def __init__(self, report):
        super().__init__("non-finite loss during training")
        self.report = report


def _recall20(params, events, n_items, k=20):
    if not events:
        return 0.0
    hits = 0
    for ev in events:
        trace = score_event(params, ev.user_id, ev.recent, ev.ctx)
        s = trace.scores
        st = s[ev.target]
        rank = 1 + int(np.sum(s > st)) + int(np.sum((s[: ev.target] == st)))
        if rank <= k:
            hits += 1
    return hits / len(events)


def train(dataset, fold, config, log_fn=None):
    """Train the model on one fold with early stopping on validation R@20.

    Returns (best_params, TrainReport).  Raises TrainingDiverged on a
    non-finite loss (the partial report rides on the exception).
    """
    train_events = prepare_events(dataset, fold.train_ids)
    val_events = prepare_events(dataset, fold.val_ids)
    if not train_events:
        raise ValueError("fold has no training events")

    n_items = dataset.n_items
    params = BrmParams.init(dataset.n_users, n_items, config.d, config.seed)
    state = numerics.AdamState()
    rng = np.random.default_rng(config.seed)
    report = TrainReport(config=config)
    best = params.copy()
    best_r20 = -1.0
    best_epoch = -1
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_events))
        l1_sum = 0.0
        l2_sum = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [train_events[i] for i in order[lo : lo + config.batch_size]]
            cand = np.unique(
                np.concatenate([[ev.target for ev in batch]] + [ev.ctx for ev in batch]).astype(np.int64)
            )
            d_item = np.zeros_like(params.item_emb)
            d_user = np.zeros_like(params.user_emb)
            d_w = np.zeros_like(params.gate_w)
            d_b = np.zeros(1)
            weight = 1.0 / len(batch)
            for ev in batch:
                t_pos = int(np.searchsorted(cand, ev.target))
                l1, l2 = kernels.event_loss_grad(
                    params.item_emb,
                    params.user_emb,
                    params.gate_w,
                    float(params.gate_b[0]),
                    ev.user_id,
                    ev.recent,
                    ev.ctx,
                    cand,
                    t_pos,
                    ev.y_n,
                    ev.y_m,
                    config.beta,
                    weight,
                    d_item,
                    d_user,
                    d_w,
                    d_b,
                )
                l1_sum += l1
                l2_sum += l2
            if not (np.isfinite(l1_sum) and np.isfinite(l2_sum)):
                report.diverged = True
                raise TrainingDiverged(report)
            grads = {"user_emb": d_user, "item_emb": d_item, "gate_w": d_w, "gate_b": d_b}
            if config.optimizer == "adam":
                numerics.adam_step(params.as_dict(), grads, state, lr=config.lr)
            else:
                for name, p in params.as_dict().items():
                    p -= config.lr * grads[name]

        l1_mean = l1_sum / len(train_events)
        l2_mean = l2_sum / len(train_events)
        r20 = _recall20(params, val_events, n_items)
        report.epochs.append((epoch, l1_mean, l2_mean, r20))
        if log_fn:
            log_fn(f"epoch {epoch}: l1={l1_mean:.4f} l2={l2_mean:.4f} val_r20={r20:.4f}")
        if r20 > best_r20:
            best_r20 = r20
            best_epoch = epoch
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    report.best_epoch = best_epoch
    report.best_val_r20 = best_r20
    return best, report
