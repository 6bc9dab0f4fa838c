from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

import recovery_cases
from abmspec.recovery import (
    DuplicateAfterNormalizationError,
    NoJsonFoundError,
    UnrecoverableJsonError,
    extract_json,
    normalize_keys,
    null_placeholder_echoes,
    recover_payload,
)


def leaves_in_span(tree, raw, span) -> bool:
    """Conservation oracle: every leaf and key of the tree occurs in the span.

    Texts that went through quote repair may carry a ``\\'`` escape in the
    raw form, so an apostrophe-escaped variant also counts as present.
    """
    window = raw[span[0] : span[1]]

    def present(text: str) -> bool:
        return text in window or text.replace("'", "\\'") in window

    def walk(node) -> bool:
        if isinstance(node, dict):
            return all(present(key) and walk(value) for key, value in node.items())
        if isinstance(node, list):
            return all(walk(item) for item in node)
        if isinstance(node, str):
            return present(node)
        if isinstance(node, bool) or node is None:
            return True
        return present(json.dumps(node))

    return walk(tree)


@pytest.mark.parametrize("case", recovery_cases.CASES, ids=lambda c: c.name)
def test_recovery_against_strict_oracle(case):
    tree, report = extract_json(case.raw)
    if case.echoes:
        tree, _ = null_placeholder_echoes(tree)
    assert tree == json.loads(case.strict)
    if not case.echoes:
        assert report.repairs_applied == list(case.repairs)


@pytest.mark.parametrize("case", recovery_cases.CASES, ids=lambda c: c.name)
def test_conservation_no_fabricated_leaves(case):
    tree, report = extract_json(case.raw)
    assert leaves_in_span(tree, case.raw, report.original_span)


@pytest.mark.parametrize("raw", recovery_cases.UNRECOVERABLE)
def test_unrecoverable(raw):
    with pytest.raises(UnrecoverableJsonError) as excinfo:
        extract_json(raw)
    assert excinfo.value.raw == raw


@pytest.mark.parametrize("raw", recovery_cases.NO_JSON)
def test_no_json_found(raw):
    with pytest.raises(NoJsonFoundError) as excinfo:
        extract_json(raw)
    assert excinfo.value.raw == raw


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        extract_json("")


def test_original_span_points_at_object():
    raw = 'Intro text {"a": 1} trailing'
    _, report = extract_json(raw)
    start, end = report.original_span
    assert raw[start:end] == '{"a": 1}'


def test_idempotence_on_own_output():
    tree, _ = extract_json("{'a': [1, 2,], 'b': 'it''s fine'}".replace("''", "\\'"))
    again, report = extract_json(json.dumps(tree))
    assert again == tree
    assert report.repairs_applied == []


@st.composite
def json_objects(draw):
    scalars = st.one_of(
        st.integers(min_value=-1000, max_value=1000),
        st.booleans(),
        st.none(),
        st.text(
            alphabet=st.characters(blacklist_categories=("Cs", "Cc")),
            max_size=20,
        ),
    )
    value = st.recursive(
        scalars,
        lambda children: st.one_of(
            st.lists(children, max_size=4),
            st.dictionaries(st.text(max_size=10), children, max_size=4),
        ),
        max_leaves=10,
    )
    return draw(st.dictionaries(st.text(min_size=1, max_size=10), value, max_size=5))


@given(json_objects())
def test_strict_serialization_round_trips_with_no_repairs(tree):
    raw = json.dumps(tree, ensure_ascii=False)
    recovered, report = extract_json(raw)
    assert recovered == tree
    assert report.repairs_applied == []


_FUZZ_ALPHABET = "{}[]'\",:\\ \n\tabc01`#-_" + "…é"


@given(st.text(alphabet=_FUZZ_ALPHABET, min_size=1, max_size=200))
def test_extract_json_never_raises_unexpected_errors(raw):
    """Arbitrary garbage either recovers to an object or fails with a typed error."""
    try:
        tree, report = extract_json(raw)
    except (NoJsonFoundError, UnrecoverableJsonError):
        return
    assert isinstance(tree, dict)
    start, end = report.original_span
    assert 0 <= start < end <= len(raw)


@given(json_objects())
def test_normalize_keys_idempotent_on_arbitrary_objects(tree):
    from abmspec.recovery import DuplicateAfterNormalizationError

    for stage in ("P1", "P4", "P7"):
        try:
            once = normalize_keys(tree, stage)
        except DuplicateAfterNormalizationError:
            continue
        assert normalize_keys(once, stage) == once


# --- key normalization -------------------------------------------------------


def test_order_alias_rewritten():
    value = {"SPACE": {"pcolor": {"excution_order": 2}}}
    out = normalize_keys(value, "P7")
    assert out == {"SPACE": {"pcolor": {"execution_order": 2}}}


def test_order_number_rewritten_for_p4():
    value = {"Wolves": {"energy": {"order_number": 1}}}
    assert normalize_keys(value, "P4") == {"Wolves": {"energy": {"execution_order": 1}}}


def test_conflicting_aliases_raise():
    value = {"Wolves": {"energy": {"order_number": 1, "excution_order": 2}}}
    with pytest.raises(DuplicateAfterNormalizationError):
        normalize_keys(value, "P4")


def test_equal_alias_values_collapse():
    value = {"Wolves": {"energy": {"order_number": 1, "execution_order": 1}}}
    out = normalize_keys(value, "P4")
    assert out == {"Wolves": {"energy": {"execution_order": 1}}}


def test_theme_casing_variants():
    assert normalize_keys({"space": {"type": "grid"}}, "P5") == {"SPACE": {"type": "grid"}}
    assert normalize_keys({"Space": {}}, "P6") == {"SPACE": {}}
    assert normalize_keys({"model-level": {}}, "P9") == {"Model-Level": {}}
    assert normalize_keys({"Model_Level": {}}, "P8") == {"Model-Level": {}}
    assert normalize_keys({"MODEL_PURPOSE": {}}, "P1") == {"Model_Purpose": {}}


def test_theme_rewrite_only_at_top_level():
    # a space variable literally named "space" must keep its name
    value = {"SPACE": {"space": {"data_type": "string"}}}
    assert normalize_keys(value, "P6") == value


def test_order_alias_untouched_outside_dynamics_stages():
    value = {"Wolves": {"order_number": {"data_type": "integer"}}}
    assert normalize_keys(value, "P3") == value


def test_alias_with_object_value_is_a_variable_name():
    # a variable named order_number holds an object; its key must survive
    value = {"Wolves": {"order_number": {"value_boundaries": None}}}
    assert normalize_keys(value, "P4") == value


def test_normalize_keys_idempotent():
    value = {"Space": {"pcolor": {"excution_order": 2, "frequency": "every tick"}}}
    once = normalize_keys(value, "P7")
    assert normalize_keys(once, "P7") == once


def test_normalize_keys_requires_object():
    with pytest.raises(ValueError):
        normalize_keys([1, 2], "P1")


def test_recover_payload_tags_key_alias():
    value, report = recover_payload('{"Wolves": {"e": {"order_number": 1}}}', "P4")
    assert value == {"Wolves": {"e": {"execution_order": 1}}}
    assert report.repairs_applied == ["key_alias"]


def test_recover_payload_no_alias_tag_when_canonical():
    value, report = recover_payload('{"Wolves": {"e": {"execution_order": 1}}}', "P4")
    assert report.repairs_applied == []


# --- placeholder echoes -------------------------------------------------------


def test_echo_value_becomes_null():
    tree = {"Wolves": {"short_description": "SHORT_DESCRIPTION"}}
    cleaned, paths = null_placeholder_echoes(tree)
    assert cleaned == {"Wolves": {"short_description": None}}
    assert paths == ["Wolves/short_description"]


def test_echo_key_dropped():
    tree = {"SPACE": {"VAR1": {"x": 1}, "real_var": {"x": 2}}}
    cleaned, paths = null_placeholder_echoes(tree)
    assert cleaned == {"SPACE": {"real_var": {"x": 2}}}
    assert paths == ["SPACE/VAR1"]


def test_echo_list_items_dropped():
    tree = {"qs": ["RESEARCH_QUESTION_1", "keep me", "RESEARCH_QUESTION_2"]}
    cleaned, paths = null_placeholder_echoes(tree)
    assert cleaned == {"qs": ["keep me"]}
    assert paths == ["qs/0", "qs/2"]


def test_non_echo_values_untouched():
    tree = {"a": "short description", "b": 3, "c": None, "d": True}
    cleaned, paths = null_placeholder_echoes(tree)
    assert cleaned == tree
    assert paths == []


def test_value_sentinel_as_key_survives():
    # a field name miswritten in sentinel casing is not information loss:
    # the entry stays (for the unknown-key warning), only echoed values null
    tree = {"SPACE": {"TYPE": "grid", "type": "TYPE"}}
    cleaned, paths = null_placeholder_echoes(tree)
    assert cleaned == {"SPACE": {"TYPE": "grid", "type": None}}
    assert paths == ["SPACE/type"]
