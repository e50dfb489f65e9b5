"""Object identity synchronization.

Fresh hypotheses from one frame are matched against the known scene graph by
a weighted similarity policy; accepted matches inherit the known identity,
the rest become new objects. Known objects that should have been visible but
went unmatched accumulate misses and are removed after a patience window.
Object ids only change when objects are exchanged or added.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import (EVENT_MOVED, EVENT_UPDATED, IdentityEvent, ModelError,
                    ObjectHypothesis, SceneGraph, hellinger)


@dataclass
class IdentityPolicy:
    """Weights and thresholds for the similarity-based matching."""

    weight_position: float = 0.4
    weight_class: float = 0.2
    weight_histogram: float = 0.3
    weight_shape: float = 0.1
    position_scale: float = 0.10  # meters
    shape_scale: float = 0.05  # meters, L1 on extents
    accept_threshold: float = 0.6
    move_threshold: float = 0.01  # meters
    removal_patience: int = 3  # consecutive missed frames

    def __post_init__(self):
        weights = (self.weight_position, self.weight_class,
                   self.weight_histogram, self.weight_shape)
        if any(w < 0 for w in weights):
            raise ModelError("similarity weights must be non-negative")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ModelError("similarity weights must sum to 1")
        if not 0.0 < self.accept_threshold < 1.0:
            raise ModelError("accept threshold must lie in (0, 1)")


def similarity(policy: IdentityPolicy, candidate: ObjectHypothesis,
               known: ObjectHypothesis) -> float:
    """Weighted similarity in [0, 1]; missing annotations contribute zero."""
    score = 0.0
    if candidate.pose is not None and known.pose is not None:
        dpos = float(np.linalg.norm(candidate.pose.position - known.pose.position))
        score += policy.weight_position * math.exp(-dpos / policy.position_scale)
    if candidate.class_ranking and known.class_ranking:
        score += policy.weight_class * (candidate.top_label() == known.top_label())
    if candidate.histogram is not None and known.histogram is not None:
        try:
            score += policy.weight_histogram * (1.0 - hellinger(candidate.histogram,
                                                                known.histogram))
        except ValueError:
            pass
    if candidate.extents is not None and known.extents is not None:
        dext = float(np.abs(np.sort(candidate.extents) - np.sort(known.extents)).sum())
        score += policy.weight_shape * math.exp(-dext / policy.shape_scale)
    return score


def synchronize(graph: SceneGraph, fresh: list, policy: IdentityPolicy,
                tick: int, visible=None) -> list[IdentityEvent]:
    """Match one frame's hypotheses into the graph; returns the events.

    Greedy matching: all (fresh, known) pairs are scored and accepted in
    descending score order (ties to the lower known id) while the score
    clears the acceptance threshold and both sides are still unmatched.
    Unmatched fresh hypotheses are added under new monotonic ids. Unmatched
    knowns count a miss only when `visible` says their counterpart should
    appear in the current view; after the patience window they are removed
    and unlinked. This is the single mutation point of the graph.
    """
    if visible is None:
        visible = lambda identity: True
    start = len(graph.events)
    pairs = []
    known_items = list(graph.objects.items())
    for fi, cand in enumerate(fresh):
        for identity, known in known_items:
            s = similarity(policy, cand, known)
            if s >= policy.accept_threshold:
                pairs.append((s, identity, fi))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))

    matched_known: set[int] = set()
    matched_fresh: set[int] = set()
    for score, identity, fi in pairs:
        if identity in matched_known or fi in matched_fresh:
            continue
        matched_known.add(identity)
        matched_fresh.add(fi)
        cand = fresh[fi]
        prev = graph.objects[identity]
        moved = float(np.linalg.norm(cand.pose.position - prev.pose.position))
        graph.replace(identity, cand)
        graph.log(IdentityEvent(EVENT_UPDATED, identity, tick))
        if moved > policy.move_threshold:
            graph.log(IdentityEvent(EVENT_MOVED, identity, tick,
                                    detail=f"{moved:.4f}"))

    for fi, cand in enumerate(fresh):
        if fi not in matched_fresh:
            graph.add(cand, tick)

    for identity, _ in known_items:
        if identity in matched_known:
            continue
        if not visible(identity):
            continue
        graph.miss_counts[identity] = graph.miss_counts.get(identity, 0) + 1
        if graph.miss_counts[identity] >= policy.removal_patience:
            graph.remove(identity, tick)

    return graph.events[start:]
