import pytest
from hypothesis import given, strategies as st

from canevo.errors import DuplicatePriority, MalformedInput, NonPositiveParameter, UnknownMessage
from canevo.model import (
    AnalysisConfig, Message, format_message_csv, hp_set, lp_set, parse_message_csv, task_graph_from_dict,
    task_graph_to_dict, validate_message_set,
)

from conftest import make_set


def test_singleton_is_valid():
    ms = make_set(("a", 1, 1, 4, 4, 0))
    assert len(ms) == 1 and ms["a"].c == 1


def test_duplicate_priority():
    with pytest.raises(DuplicatePriority):
        make_set(("a", 1, 1, 4, 4), ("b", 1, 1, 5, 5))


@pytest.mark.parametrize("row", [("a", 1, 0, 4, 4), ("a", 1, 1, 0, 4), ("a", 1, 1, 4, 0), ("a", 1, 1, 4, 4, -1)])
def test_non_positive(row):
    with pytest.raises(NonPositiveParameter):
        make_set(row)


def test_duplicate_id():
    with pytest.raises(MalformedInput):
        make_set(("a", 1, 1, 4, 4), ("a", 2, 1, 5, 5))


def test_sorted_by_priority_and_flags():
    ms = make_set(("lo", 3, 1, 10, 10), ("hi", 1, 5, 4, 3), ("mid", 2, 1, 8, 8))
    assert ms.ids == ["hi", "mid", "lo"]
    assert ms.flagged == ("hi",)


def test_hp_lp():
    ms = make_set(("a", 1, 1, 4, 4), ("b", 2, 1, 5, 5), ("c", 3, 1, 6, 6))
    assert hp_set(ms, "a") == []
    assert [m.id for m in hp_set(ms, "c")] == ["a", "b"]
    assert [m.id for m in hp_set(ms, "b")] == ["a"]
    assert [m.id for m in lp_set(ms, "a")] == ["b", "c"]
    with pytest.raises(UnknownMessage):
        hp_set(ms, "zz")


@given(st.lists(st.tuples(st.integers(1, 50), st.integers(1, 200), st.integers(0, 30)), min_size=1, max_size=12))
def test_hp_lp_partition(rows):
    ms = validate_message_set(Message(f"m{i}", i + 1, c, c + t, c + t, j) for i, (c, t, j) in enumerate(rows))
    for m in ms:
        others = {x.id for x in hp_set(ms, m.id)} | {x.id for x in lp_set(ms, m.id)}
        assert others == set(ms.ids) - {m.id}
        assert all(x.priority < m.priority for x in hp_set(ms, m.id))


def test_csv_round_trip(micro):
    text = format_message_csv(micro, ["canevo test"])
    assert text.startswith("# canevo test\n")
    assert parse_message_csv(text) == micro


@pytest.mark.parametrize("text", ["id,priority,c\n", "id,priority,c,t,d,j\na,1,x,4,4,0\n", ""])
def test_csv_malformed(text):
    with pytest.raises(MalformedInput):
        parse_message_csv(text)


def test_config_cap():
    cfg = AnalysisConfig(cap_factor=4)
    assert cfg.cap(Message("a", 1, 1, 10, 7)) == 40


def test_task_graph_round_trip():
    doc = {"tasks": [{"id": "t0", "wcet": 1, "t": 5, "d": 5, "priority": 1},
                     {"id": "t1", "wcet": 2, "t": 5, "d": 5, "priority": 2}],
           "edges": [{"src": "t0", "dst": "t1", "frame": {"id": "f", "priority": 1, "c": 1, "t": 5, "d": 5, "j": 0}}]}
    assert task_graph_to_dict(task_graph_from_dict(doc)) == doc


def test_task_graph_bad_edge():
    doc = {"tasks": [{"id": "t0", "wcet": 1, "t": 5, "d": 5, "priority": 1}],
           "edges": [{"src": "t0", "dst": "nope", "frame": {"id": "f", "priority": 1, "c": 1, "t": 5, "d": 5}}]}
    with pytest.raises(MalformedInput):
        task_graph_from_dict(doc)
