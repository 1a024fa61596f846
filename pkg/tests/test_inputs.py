from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from algebra_errors.inputs import NO_ACTION, EmptyEquation, InputMode, build_input
from conftest import make_classifier, make_record


def test_control_mode_joins_equations():
    record = make_record("x+4=8", "x+4+4=8+4", action="add 4 to both sides")
    assert build_input(record, InputMode.CONTROL, separator="[SEP]").text == "x+4=8 [SEP] x+4+4=8+4"


def test_action_mode_inserts_action():
    record = make_record("x+4=8", "x+4+4=8+4", action="add 4 to both sides")
    out = build_input(record, "action", separator="[SEP]")
    assert out.text == "x+4=8 [SEP] add 4 to both sides [SEP] x+4+4=8+4"
    assert not out.truncated


def test_missing_action_is_marked():
    assert build_input(make_record("x+4=8", "x=4"), InputMode.ACTION).text == f"x+4=8 | {NO_ACTION} | x=4"


def test_empty_equation_rejected():
    with pytest.raises(EmptyEquation):
        build_input(make_record("x+4=8", "  "), InputMode.CONTROL)
    with pytest.raises(EmptyEquation):
        build_input(make_record("", "x=4"), InputMode.CONTROL)


@pytest.fixture(scope="module")
def encoder():
    return make_classifier("encoder", 3)


def test_overlong_input_truncated_to_token_budget(encoder):
    long_eq = "x" + "+4" * 2498 + "=80"
    assert len(long_eq) == 5000
    record = make_record(long_eq, "x=4", action="add 4")
    for mode in InputMode:
        out = build_input(record, mode, separator="[SEP]", count_tokens=encoder.count_tokens, max_tokens=128)
        assert out.truncated
        assert encoder.count_tokens(out.text) == 128
        assert out.text.endswith("[SEP] x=4")


def test_current_step_kept_when_prior_is_long(encoder):
    record = make_record("y" + "-2" * 400 + "=0", "y" + "*3" * 30 + "=1")
    out = encoder.serialize(record)
    assert out.truncated and out.text.endswith("y" + "*3" * 30 + "=1")
    assert encoder.count_tokens(out.text) <= encoder.config.max_tokens


def test_overlong_current_step_cut_from_its_end():
    record = make_record("x=1", "x" + "+1" * 100 + "=2")
    out = build_input(record, InputMode.CONTROL, max_tokens=40)
    assert out.truncated and len(out.text) == 40
    assert out.text.startswith(" | x+1")


segment = st.text(alphabet="xy0123456789+-*/=() ", min_size=1, max_size=12).filter(lambda s: s.strip())


@given(segment, segment, st.one_of(st.none(), segment), segment, segment, st.one_of(st.none(), segment))
def test_distinct_triples_serialize_distinctly(p1, c1, a1, p2, c2, a2):
    r1, r2 = make_record(p1, c1, a1), make_record(p2, c2, a2)
    key = lambda p, a, c: (p.strip(), (a or "").strip() or NO_ACTION, c.strip())
    t1, t2 = build_input(r1, InputMode.ACTION).text, build_input(r2, InputMode.ACTION).text
    if key(p1, a1, c1) != key(p2, a2, c2):
        assert t1 != t2
    if (p1.strip(), c1.strip()) != (p2.strip(), c2.strip()):
        assert build_input(r1, InputMode.CONTROL).text != build_input(r2, InputMode.CONTROL).text


def is_subsequence(short, long):
    it = iter(long)
    return all(c in it for c in short)


@given(segment, segment, st.one_of(st.none(), segment))
def test_control_is_subsequence_of_action(prior, current, action):
    record = make_record(prior, current, action)
    assert is_subsequence(build_input(record, InputMode.CONTROL).text, build_input(record, InputMode.ACTION).text)
