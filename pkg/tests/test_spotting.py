"""Retrieval pipeline: greedy matching, >=2-entry spotting, expansion, slots."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vkmn.kb import Triple, build_graph
from vkmn.spotting import (
    SlotAssignment,
    SpottedSet,
    expand_neighborhood,
    match_entries,
    select_slots,
    spot_question,
    spot_triples,
)


def _graph():
    return build_graph(
        [
            Triple("dog", "eat", "bone"),     # 0
            Triple("cat", "eat", "fish"),     # 1
            Triple("dog", "chase", "cat"),    # 2
            Triple("sit on top", "of", "red car"),  # 3, multi-word entries
        ]
    )


# ---------------------------------------------------------------- matching

def test_match_entries_unigrams():
    g = _graph()
    got = match_entries(["what", "do", "dog", "eat"], g.entry_set())
    assert got == {"dog", "eat"}


def test_match_entries_longest_wins():
    g = _graph()
    # "sit on top" must absorb all three tokens in one jump
    got = match_entries(["sit", "on", "top", "of", "red", "car"], g.entry_set())
    assert got == {"sit on top", "of", "red car"}


def test_match_entries_cursor_jumps_past_match():
    g = build_graph([Triple("a b", "r", "b"), Triple("b", "q", "c")])
    # after matching "a b" at position 0 the scan resumes at position 2,
    # so the "b" inside the bigram is not matched again on its own
    assert match_entries(["a", "b"], g.entry_set()) == {"a b"}
    assert match_entries(["a", "b", "b"], g.entry_set()) == {"a b", "b"}


def test_match_entries_no_tokens():
    assert match_entries([], _graph().entry_set()) == set()


@given(st.lists(st.sampled_from(["dog", "eat", "bone", "zzz", "sit", "on", "top"]),
                max_size=10))
@settings(max_examples=100, deadline=None)
def test_match_entries_subset_of_entry_set(tokens):
    g = _graph()
    entries = g.entry_set().combined
    assert match_entries(tokens, g.entry_set()) <= entries


# ---------------------------------------------------------------- spotting

def test_spot_requires_two_distinct_entries():
    g = _graph()
    assert spot_triples({"eat"}, g).core == []
    got = spot_triples({"dog", "eat"}, g)
    assert got.core == [0]
    assert got.match_count == {0: 2}


def test_spot_repeated_phrase_counts_once():
    # subject and target are the same phrase: still a single matched entry
    g = build_graph([Triple("a", "r", "a")])
    assert spot_triples({"a"}, g).core == []
    assert spot_triples({"a", "r"}, g).core == [0]


def test_spot_core_is_sorted_by_tid():
    g = _graph()
    got = spot_triples({"dog", "eat", "cat"}, g)
    assert got.core == [0, 1, 2]
    assert got.core == sorted(got.core)


def test_spot_empty_matched():
    got = spot_triples(set(), _graph())
    assert got.core == [] and got.expanded == []


# ---------------------------------------------------------------- expansion

def test_expand_appends_one_hop_neighbors():
    g = _graph()
    spotted = spot_triples({"dog", "eat"}, g)  # core [0]
    out = expand_neighborhood(spotted, g)
    # triple 0 shares "eat" with 1 and "dog" with 2; 3 is disconnected
    assert out.core == [0]
    assert out.expanded == [0, 1, 2]
    assert out.match_count == {0: 2, 1: 1, 2: 1}


def test_expand_no_core_no_neighbors():
    g = _graph()
    out = expand_neighborhood(spot_triples(set(), g), g)
    assert out.expanded == []


def test_expand_isolated_core():
    g = _graph()
    spotted = spot_triples({"sit on top", "red car"}, g)
    out = expand_neighborhood(spotted, g)
    assert out.expanded == [3]


def test_expand_neighbors_within_one_hop():
    g = _graph()
    out = expand_neighborhood(spot_triples({"dog", "eat"}, g), g)
    core = set(out.core)
    for tid in out.expanded:
        assert tid in core or any(tid in g.adjacency[c] for c in core)


# ---------------------------------------------------------------- slots

def test_select_slots_pads_with_none():
    g = _graph()
    spotted = expand_neighborhood(spot_triples({"dog", "eat"}, g), g)
    sa = select_slots(spotted, g, m_slots=8)
    assert len(sa.slots) == 8
    assert sa.n_real == 3
    assert sa.slots[3:] == [None] * 5
    assert sa.mask == [True] * 3 + [False] * 5


def test_select_slots_truncates_by_rank():
    g = _graph()
    spotted = expand_neighborhood(spot_triples({"dog", "eat"}, g), g)
    sa = select_slots(spotted, g, m_slots=2)
    # core triple 0 (match 2) first; then neighbor with higher frequency-sum:
    # tid 1 <cat,eat,fish> sums eat=2+cat=2+fish=1 = 5,
    # tid 2 <dog,chase,cat> sums dog=2+chase=1+cat=2 = 5 -> tie, lower tid wins
    assert sa.slots == [0, 1]


def test_select_slots_rank_ordering():
    g = build_graph(
        [
            Triple("a", "r1", "x"),  # 0
            Triple("a", "r2", "y"),  # 1 shares only "a" with 0
            Triple("a", "r1", "z"),  # 2 shares "a" and "r1" with 0
        ]
    )
    spotted = expand_neighborhood(spot_triples({"a", "r1"}, g), g)
    sa = select_slots(spotted, g, m_slots=3)
    # 0 and 2 both cover two entries; 1 covers one. Among {0, 2} the
    # frequency sums are equal (same phrases), so tid breaks the tie.
    assert sa.slots == [0, 2, 1]


def test_select_slots_rejects_zero_slots():
    g = _graph()
    with pytest.raises(ValueError):
        select_slots(spot_triples(set(), g), g, m_slots=0)


def test_slot_assignment_validation():
    with pytest.raises(ValueError):
        SlotAssignment(slots=[1, None], mask=[True, True])
    with pytest.raises(ValueError):
        SlotAssignment(slots=[1, 1], mask=[True, True])
    with pytest.raises(ValueError):
        SlotAssignment(slots=[1], mask=[True, False])


# ---------------------------------------------------------------- pipeline

def test_spot_question_end_to_end():
    g = _graph()
    sa = spot_question(["what", "do", "dog", "eat"], g, m_slots=4)
    assert sa.slots[0] == 0
    assert set(s for s in sa.slots if s is not None) == {0, 1, 2}


def test_spot_question_unmatched_tokens_only():
    g = _graph()
    sa = spot_question(["quantum", "flux"], g, m_slots=4)
    assert sa.n_real == 0
    assert sa.slots == [None] * 4


pool_triples = st.lists(
    st.tuples(
        st.sampled_from(["a", "b", "c", "d"]),
        st.sampled_from(["r", "q"]),
        st.sampled_from(["x", "y", "z"]),
    ),
    min_size=1,
    max_size=15,
)


@given(pool_triples, st.sets(st.sampled_from(["a", "b", "c", "d", "r", "q", "x", "y", "z"]),
                             max_size=6))
@settings(max_examples=200, deadline=None)
def test_spot_matches_brute_force(raw, matched):
    g = build_graph([Triple(*p) for p in raw])
    got = spot_triples(matched, g)
    want = sorted(
        tid for tid, t in enumerate(g.triples)
        if len(matched & set(t.phrases())) >= 2
    )
    assert got.core == want


@given(pool_triples, st.sets(st.sampled_from(["a", "b", "r", "x", "y"]), max_size=4),
       st.sampled_from(["c", "d", "q", "z"]))
@settings(max_examples=100, deadline=None)
def test_spot_core_monotone_in_matched(raw, matched, extra):
    g = build_graph([Triple(*p) for p in raw])
    small = set(spot_triples(matched, g).core)
    big = set(spot_triples(matched | {extra}, g).core)
    assert small <= big


@given(pool_triples, st.lists(st.sampled_from(["a", "b", "r", "x", "what"]), max_size=8),
       st.integers(min_value=1, max_value=6))
@settings(max_examples=100, deadline=None)
def test_spot_question_shape_and_determinism(raw, tokens, m):
    g = build_graph([Triple(*p) for p in raw])
    sa1 = spot_question(tokens, g, m_slots=m)
    sa2 = spot_question(tokens, g, m_slots=m)
    assert len(sa1.slots) == m
    assert sa1.slots == sa2.slots and sa1.mask == sa2.mask
    real = [s for s in sa1.slots if s is not None]
    assert len(real) == len(set(real))
