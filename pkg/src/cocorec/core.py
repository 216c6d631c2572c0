"""Core domain types: interactions, sessions, datasets and prediction events.

Everything here is immutable after construction and safe to share across
workers.  Identifier spaces are dense integer indices; the mapping back to
external ids lives on the Dataset.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

RECENT_CAP = 10


class Interaction(NamedTuple):
    user_id: int
    item_id: int
    timestamp: int


@dataclass(frozen=True)
class Session:
    """A gap-delimited, time-ordered item list of one user."""

    session_id: int
    user_id: int
    items: tuple
    start_time: int
    end_time: int

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class PredictionEvent:
    """One (context, target) pair expanded from a session.

    context is a strict non-empty prefix of the session's items; target is
    the item immediately after it.  recent is the deduplicated set of the
    user's last RECENT_CAP interactions strictly before the session start,
    stored as a sorted tuple (attention over it is permutation invariant).
    """

    session_id: int
    user_id: int
    context: tuple
    recent: tuple
    target: int
    start_time: int


@dataclass
class Dataset:
    """Dense-indexed interaction log plus derived sessions and vocabularies."""

    user_vocab: list  # dense index -> external id
    item_vocab: list
    interactions: dict  # user index -> list[Interaction], time-sorted
    sessions: list = field(default_factory=list)

    @property
    def n_users(self):
        return len(self.user_vocab)

    @property
    def n_items(self):
        return len(self.item_vocab)

    @property
    def n_interactions(self):
        return sum(len(v) for v in self.interactions.values())


def recent_set(history, start_time, cap=RECENT_CAP):
    """Deduplicated items of the user's last `cap` interactions before start_time.

    The cap applies to interactions (pre-dedup); history must be time-sorted.
    """
    before = [it.item_id for it in history if it.timestamp < start_time]
    return tuple(sorted(set(before[-cap:])))


def prior_items(history, start_time):
    """All items the user interacted with strictly before start_time."""
    return {it.item_id for it in history if it.timestamp < start_time}


def expand_events(sessions, histories, cap=RECENT_CAP):
    """Expand sessions into prediction events, one per target position.

    A session of length L yields L-1 events: for k = 2..L the context is the
    first k-1 items and the target is the k-th item.
    """
    events = []
    for s in sessions:
        history = histories.get(s.user_id, [])
        recent = recent_set(history, s.start_time, cap)
        for k in range(2, len(s.items) + 1):
            events.append(
                PredictionEvent(
                    session_id=s.session_id,
                    user_id=s.user_id,
                    context=s.items[: k - 1],
                    recent=recent,
                    target=s.items[k - 1],
                    start_time=s.start_time,
                )
            )
    return events
