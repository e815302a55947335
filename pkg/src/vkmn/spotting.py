"""Question-to-memory retrieval: entry matching, triple spotting, slot packing.

Pipeline per question: greedy n-gram matching against the KB entry set,
collect triples anchored by at least two matched entries, widen one
adjacency hop, then rank and pad into exactly M memory slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set

from .kb import EntrySet, KnowledgeGraph

MAX_NGRAM = 4  # longest multi-word KB entry we scan for


@dataclass
class SpottedSet:
    matched_entries: Set[str]
    core: List[int]
    expanded: List[int]
    match_count: Dict[int, int] = field(default_factory=dict)


@dataclass
class SlotAssignment:
    """Exactly M slots, each a triple id or None; mask marks real slots."""

    slots: List[Optional[int]]
    mask: List[bool]

    def __post_init__(self):
        if len(self.slots) != len(self.mask):
            raise ValueError("slots and mask length mismatch")
        for s, m in zip(self.slots, self.mask):
            if m != (s is not None):
                raise ValueError("mask must be true exactly at non-null slots")
        real = [s for s in self.slots if s is not None]
        if len(real) != len(set(real)):
            raise ValueError("duplicate triple in slots")

    @property
    def n_real(self) -> int:
        return sum(self.mask)


def match_entries(question_tokens: Sequence[str], entry_set: EntrySet) -> Set[str]:
    """Greedy longest-match scan of the token stream against S = E u R.

    At each position the longest n-gram (n <= MAX_NGRAM) present in S wins
    and the cursor jumps past it, so "sit on top" beats "on".
    """
    entries = entry_set.combined
    matched: Set[str] = set()
    i = 0
    n_tokens = len(question_tokens)
    while i < n_tokens:
        hit = None
        for n in range(min(MAX_NGRAM, n_tokens - i), 0, -1):
            phrase = " ".join(question_tokens[i:i + n])
            if phrase in entries:
                hit = (phrase, n)
                break
        if hit is not None:
            matched.add(hit[0])
            i += hit[1]
        else:
            i += 1
    return matched


def spot_triples(matched: Set[str], graph: KnowledgeGraph) -> SpottedSet:
    """Core retrieval: triples whose fields cover >= 2 distinct matched entries."""
    counts: Dict[int, int] = {}
    for phrase in matched:
        for tid in graph.entry_index.get(phrase, ()):
            counts[tid] = counts.get(tid, 0) + 1
    core = sorted(tid for tid, c in counts.items() if c >= 2)
    return SpottedSet(
        matched_entries=set(matched),
        core=core,
        expanded=list(core),
        match_count={tid: counts[tid] for tid in core},
    )


def expand_neighborhood(spotted: SpottedSet, graph: KnowledgeGraph) -> SpottedSet:
    """Append every 1-hop neighbor of a core triple, in triple-id order.

    Neighbor match_count is its own matched-entry coverage (0 or 1; two or
    more would have put it in the core already).
    """
    core_set = set(spotted.core)
    neighbors: Set[int] = set()
    for tid in spotted.core:
        neighbors |= graph.adjacency[tid]
    neighbors -= core_set
    expanded = list(spotted.core) + sorted(neighbors)
    match_count = dict(spotted.match_count)
    for tid in sorted(neighbors):
        match_count[tid] = sum(
            1 for p in spotted.matched_entries if tid in graph.entry_index.get(p, ())
        )
    return SpottedSet(
        matched_entries=set(spotted.matched_entries),
        core=list(spotted.core),
        expanded=expanded,
        match_count=match_count,
    )


def select_slots(spotted: SpottedSet, graph: KnowledgeGraph, m_slots: int = 8) -> SlotAssignment:
    """Rank expanded triples into exactly m_slots slots, padding with nulls.

    Rank: match_count desc, then frequency-sum desc (phrases common in the
    KB act as a prior), then triple id for determinism.
    """
    if m_slots < 1:
        raise ValueError(f"need at least one slot, got {m_slots}")
    ranked = sorted(
        spotted.expanded,
        key=lambda tid: (-spotted.match_count.get(tid, 0), -graph.frequency_sum(tid), tid),
    )
    chosen = ranked[:m_slots]
    slots: List[Optional[int]] = list(chosen) + [None] * (m_slots - len(chosen))
    mask = [s is not None for s in slots]
    return SlotAssignment(slots=slots, mask=mask)


def spot_question(question_tokens: Sequence[str], graph: KnowledgeGraph,
                  m_slots: int = 8) -> SlotAssignment:
    """Full retrieval pipeline for one (already lemmatized) question."""
    matched = match_entries(question_tokens, graph.entry_set())
    spotted = expand_neighborhood(spot_triples(matched, graph), graph)
    return select_slots(spotted, graph, m_slots)
