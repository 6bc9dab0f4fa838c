from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, strategies as st

from abmspec.schema import (
    ConflictingFragmentsError,
    ModelPurpose,
    Provenance,
    SpaceHeaderFragment,
    VariableDynamics,
    canonical_json,
    fragment_from_json_value,
    fragment_to_json_value,
    fragment_to_stage_payload,
    lint,
    make_fragment,
    merge,
    normalize_data_type,
    normalize_frequency,
    parse_execution_order,
    spec_to_canonical_json,
    validate_specification,
    validate_stage_payload,
)

# --- leaf normalization -------------------------------------------------------


@pytest.mark.parametrize(
    ("raw", "expected"),
    [
        ("int", "integer"),
        ("Integer", "integer"),
        ("whole number", "integer"),
        ("Float", "real"),
        ("double", "real"),
        ("real", "real"),
        ("NUMERIC", "real"),
        ("bool", "boolean"),
        ("Boolean", "boolean"),
        ("string", "string"),
        ("Text", "string"),
        ("enum", "categorical"),
        ("Category", "categorical"),
        ("list", "list"),
        ("Array", "list"),
        ("set", "list"),
        (" float ", "real"),
        ("fuzzy-number", "unknown"),
        (None, "unknown"),
    ],
)
def test_normalize_data_type(raw, expected):
    assert normalize_data_type(raw) == expected


@pytest.mark.parametrize(
    ("raw", "expected"),
    [
        ("every tick", "every_tick"),
        ("each tick", "every_tick"),
        ("per step", "every_tick"),
        ("once", "setup_once"),
        ("at setup", "setup_once"),
        ("during initialization", "setup_once"),
        ("at start", "setup_once"),
        ("whenever energy < 0", "conditional"),
        ("if attacked", "conditional"),
        ("on event", "conditional"),
        ("no idea", "unknown"),
        (None, "unknown"),
    ],
)
def test_normalize_frequency(raw, expected):
    assert normalize_frequency(raw) == expected


@pytest.mark.parametrize("name", ["setup_once", "every_tick", "conditional", "unknown"])
def test_normalize_frequency_idempotent_over_enum(name):
    assert normalize_frequency(name) == name


@pytest.mark.parametrize(
    "name", ["integer", "real", "boolean", "string", "categorical", "list", "unknown"]
)
def test_normalize_data_type_idempotent_over_enum(name):
    assert normalize_data_type(name) == name


@pytest.mark.parametrize(
    ("value", "order", "raw"),
    [
        (None, None, None),
        (2, 2, "2"),
        ("2", 2, "2"),
        ("2nd", 2, "2nd"),
        (" 10 ", 10, " 10 "),
        ("after movement", None, "after movement"),
        (2.0, 2, "2.0"),
        (2.5, None, "2.5"),
        ("2.5", None, "2.5"),
        (True, None, "true"),
    ],
)
def test_parse_execution_order(value, order, raw):
    assert parse_execution_order(value) == (order, raw)


# --- stage validation -----------------------------------------------------------


def test_p2_basic():
    payload, issues = validate_stage_payload(
        "P2", {"Wolves": {"short_description": "predator", "agent_role": "hunts sheep"}}
    )
    assert issues == []
    assert len(payload.summaries) == 1
    summary = payload.summaries[0]
    assert (summary.name, summary.short_description, summary.agent_role) == (
        "Wolves",
        "predator",
        "hunts sheep",
    )


def test_p2_empty_object_is_vacuous():
    payload, issues = validate_stage_payload("P2", {})
    assert payload.summaries == ()
    assert issues == []


def test_p2_unknown_inner_key_warns():
    payload, issues = validate_stage_payload(
        "P2", {"Wolves": {"short_description": "x", "variables": ["energy"]}}
    )
    assert payload is not None
    assert [issue.code for issue in issues] == ["unknown_key"]
    assert issues[0].severity == "warning"


def test_p4_missing_wrapper_is_error():
    payload, issues = validate_stage_payload(
        "P4",
        {"value_boundaries": "0..1", "equation": "x", "execution_order": 1, "frequency": "tick"},
        {"AGENT_SET_NAME": "Wolves", "VAR": "energy"},
    )
    assert payload is None
    assert any(issue.code == "missing_wrapper" and issue.severity == "error" for issue in issues)


def test_p4_missing_var_wrapper_is_error():
    payload, issues = validate_stage_payload(
        "P4",
        {"Wolves": {"value_boundaries": "0..1", "equation": "x", "execution_order": 1, "frequency": "t"}},
        {"AGENT_SET_NAME": "Wolves", "VAR": "energy"},
    )
    assert payload is None
    assert any(issue.code == "missing_wrapper" for issue in issues)


def test_p4_happy_path():
    payload, issues = validate_stage_payload(
        "P4",
        {"Wolves": {"energy": {"value_boundaries": "0 to 100", "equation": "e - 1",
                               "execution_order": "3", "frequency": "every tick"}}},
        {"AGENT_SET_NAME": "Wolves", "VAR": "energy"},
    )
    assert issues == []
    assert payload.scope == "Wolves"
    assert payload.variable == "energy"
    assert payload.dynamics == VariableDynamics(
        value_boundaries="0 to 100",
        equation="e - 1",
        execution_order=3,
        raw_execution_order="3",
        frequency="every_tick",
        raw_frequency="every tick",
    )


def test_p4_case_insensitive_wrapper():
    payload, issues = validate_stage_payload(
        "P4",
        {"wolves": {"ENERGY": {"equation": "x"}}},
        {"AGENT_SET_NAME": "Wolves", "VAR": "energy"},
    )
    assert payload is not None
    assert payload.scope == "Wolves"  # canonical scope comes from the binding


def test_p4_single_key_fallback_warns():
    payload, issues = validate_stage_payload(
        "P4",
        {"Wolf": {"energy": {"equation": "x"}}},
        {"AGENT_SET_NAME": "Wolves", "VAR": "energy"},
    )
    assert payload is not None
    assert any(issue.code == "wrapper_mismatch" for issue in issues)


def test_p4_negative_order_warns_and_nulls():
    payload, issues = validate_stage_payload(
        "P4",
        {"Wolves": {"energy": {"execution_order": -2}}},
        {"AGENT_SET_NAME": "Wolves", "VAR": "energy"},
    )
    assert payload.dynamics.execution_order is None
    assert payload.dynamics.raw_execution_order == "-2"
    assert any(issue.code == "invalid_order" for issue in issues)


def test_p3_variables():
    payload, issues = validate_stage_payload(
        "P3",
        {"Wolves": {"energy": {"short_description": "tank", "data_type": "float",
                               "initial_value": 50}}},
        {"AGENT_SET_NAME": "Wolves"},
    )
    assert issues == []
    variable = payload.variables[0]
    assert variable.name == "energy"
    assert variable.descriptor.data_type == "real"
    assert variable.descriptor.raw_data_type == "float"
    assert variable.descriptor.initial_value == "50"  # numbers kept verbatim as text
    assert variable.dynamics is None


def test_p3_requires_binding():
    with pytest.raises(ValueError):
        validate_stage_payload("P3", {"Wolves": {}})


def test_p1_purpose():
    payload, issues = validate_stage_payload(
        "P1",
        {"Model_Purpose": {
            "full_description": "d",
            "research_questions": ["q1"],
            "system_boundaries": [],
            "outcome_variables": {"pop": "population"},
        }},
    )
    assert issues == []
    assert payload.purpose == ModelPurpose(
        full_description="d",
        research_questions=("q1",),
        system_boundaries=(),
        outcome_variables=(("pop", "population"),),
    )


def test_p1_missing_wrapper():
    payload, issues = validate_stage_payload("P1", {})
    assert payload is None
    assert issues[0].code == "missing_wrapper"


def test_p1_scalar_questions_coerced_with_warning():
    payload, issues = validate_stage_payload(
        "P1", {"Model_Purpose": {"research_questions": "only one?"}}
    )
    assert payload.purpose.research_questions == ("only one?",)
    assert any(issue.code == "coerced_scalar" for issue in issues)


def test_p5_space_header():
    payload, issues = validate_stage_payload(
        "P5", {"SPACE": {"short_description": "a grid", "type": "torus"}}
    )
    assert issues == []
    assert payload == SpaceHeaderFragment(short_description="a grid", space_type="torus")


def test_p6_empty_wrapper_is_zero_variables():
    payload, issues = validate_stage_payload("P6", {"SPACE": {}})
    assert payload.variables == ()
    assert issues == []


def test_p8_scope_is_model_level():
    payload, _ = validate_stage_payload(
        "P8", {"Model-Level": {"ticks": {"data_type": "int"}}}
    )
    assert payload.scope == "Model-Level"


# --- merge -----------------------------------------------------------------------


def _wolves_fragments():
    p2, _ = validate_stage_payload(
        "P2", {"Wolves": {"short_description": "predator", "agent_role": "hunts"}}
    )
    p3, _ = validate_stage_payload(
        "P3",
        {"Wolves": {"energy": {"short_description": "tank", "data_type": "float",
                               "initial_value": "50"}}},
        {"AGENT_SET_NAME": "Wolves"},
    )
    p4, _ = validate_stage_payload(
        "P4",
        {"Wolves": {"energy": {"value_boundaries": "0..100", "equation": "e-1",
                               "execution_order": 1, "frequency": "every tick"}}},
        {"AGENT_SET_NAME": "Wolves", "VAR": "energy"},
    )
    return [
        make_fragment("P2", {}, p2),
        make_fragment("P3", {"AGENT_SET_NAME": "Wolves"}, p3),
        make_fragment("P4", {"AGENT_SET_NAME": "Wolves", "VAR": "energy"}, p4),
    ]


def test_merge_partial_purpose_only():
    payload, _ = validate_stage_payload("P1", {"Model_Purpose": {"full_description": "d"}})
    spec, issues = merge([make_fragment("P1", {}, payload)])
    assert spec.purpose.full_description == "d"
    assert spec.agent_sets == ()
    assert spec.space is None
    assert spec.model_level == ()
    assert issues == []


def test_merge_joins_descriptor_and_dynamics():
    spec, issues = merge(_wolves_fragments())
    assert issues == []
    assert len(spec.agent_sets) == 1
    agent_set = spec.agent_sets[0]
    assert agent_set.short_description == "predator"
    variable = agent_set.variables[0]
    assert variable.descriptor.data_type == "real"
    assert variable.dynamics.execution_order == 1


def test_merge_orphan_dynamics():
    p4, _ = validate_stage_payload(
        "P4",
        {"Wolves": {"energy": {"equation": "e-1", "frequency": "every tick"}}},
        {"AGENT_SET_NAME": "Wolves", "VAR": "energy"},
    )
    spec, issues = merge([make_fragment("P4", {"AGENT_SET_NAME": "Wolves", "VAR": "energy"}, p4)])
    assert [issue.code for issue in issues] == ["orphan_dynamics"]
    variable = spec.agent_sets[0].variables[0]
    assert variable.descriptor.data_type == "unknown"
    assert variable.descriptor.raw_data_type is None
    assert variable.dynamics.equation == "e-1"


def test_merge_orphan_variables():
    p3, _ = validate_stage_payload(
        "P3", {"Ants": {"x": {"data_type": "int"}}}, {"AGENT_SET_NAME": "Ants"}
    )
    spec, issues = merge([make_fragment("P3", {"AGENT_SET_NAME": "Ants"}, p3)])
    assert [issue.code for issue in issues] == ["orphan_variables"]
    assert spec.agent_sets[0].name == "Ants"
    assert spec.agent_sets[0].short_description is None


def test_merge_conflicting_fragments():
    a, _ = validate_stage_payload("P1", {"Model_Purpose": {"full_description": "one"}})
    b, _ = validate_stage_payload("P1", {"Model_Purpose": {"full_description": "two"}})
    with pytest.raises(ConflictingFragmentsError):
        merge([make_fragment("P1", {}, a), make_fragment("P1", {}, b)])


def test_merge_identical_duplicates_collapse():
    a, _ = validate_stage_payload("P1", {"Model_Purpose": {"full_description": "same"}})
    b, _ = validate_stage_payload("P1", {"Model_Purpose": {"full_description": "same"}})
    spec, issues = merge([make_fragment("P1", {}, a), make_fragment("P1", {}, b)])
    assert spec.purpose.full_description == "same"


def test_merge_order_insensitive():
    fragments = _wolves_fragments()
    baseline, _ = merge(fragments)
    rng = random.Random(7)
    for _ in range(20):
        shuffled = list(fragments)
        rng.shuffle(shuffled)
        spec, _ = merge(shuffled)
        assert spec == baseline


def test_merge_space_without_header():
    p6, _ = validate_stage_payload("P6", {"SPACE": {"g": {"data_type": "float"}}})
    spec, _ = merge([make_fragment("P6", {}, p6)])
    assert spec.space is not None
    assert spec.space.space_type is None
    assert spec.space.variables[0].name == "g"


def test_merge_is_lossless_over_verbatim_fields():
    spec, _ = merge(_wolves_fragments())
    blob = spec_to_canonical_json(spec)
    for text in ("predator", "hunts", "tank", "float", "50", "0..100", "e-1", "every tick"):
        assert text in blob


# --- lint -------------------------------------------------------------------------


def _dynamics(order=None, frequency="every tick", equation="x"):
    return {"value_boundaries": None, "equation": equation,
            "execution_order": order, "frequency": frequency}


def _spec_with(dynamics_by_variable):
    fragments = []
    p3_value = {
        "Wolves": {name: {"data_type": "int"} for name in dynamics_by_variable}
    }
    p2, _ = validate_stage_payload("P2", {"Wolves": {"short_description": "w"}})
    p3, _ = validate_stage_payload("P3", p3_value, {"AGENT_SET_NAME": "Wolves"})
    fragments.append(make_fragment("P2", {}, p2))
    fragments.append(make_fragment("P3", {"AGENT_SET_NAME": "Wolves"}, p3))
    for name, dynamics in dynamics_by_variable.items():
        p4, _ = validate_stage_payload(
            "P4", {"Wolves": {name: dynamics}}, {"AGENT_SET_NAME": "Wolves", "VAR": name}
        )
        fragments.append(
            make_fragment("P4", {"AGENT_SET_NAME": "Wolves", "VAR": name}, p4)
        )
    spec, _ = merge(fragments)
    return spec


def test_lint_duplicate_order():
    spec = _spec_with({"a": _dynamics(order=1), "b": _dynamics(order=1)})
    issues = lint(spec)
    assert [issue.code for issue in issues] == ["duplicate_order"]


def test_lint_distinct_orders_clean():
    spec = _spec_with({"a": _dynamics(order=1), "b": _dynamics(order=2)})
    assert lint(spec) == []


def test_lint_same_order_different_frequency_clean():
    spec = _spec_with({"a": _dynamics(order=1), "b": _dynamics(order=1, frequency="once")})
    assert lint(spec) == []


def test_lint_equation_without_frequency():
    spec = _spec_with({"a": _dynamics(frequency="???", equation="y = x")})
    assert [issue.code for issue in lint(spec)] == ["equation_no_frequency"]


def test_lint_unmatched_outcome():
    p1, _ = validate_stage_payload(
        "P1", {"Model_Purpose": {"outcome_variables": {"population": "count"}}}
    )
    spec, _ = merge([make_fragment("P1", {}, p1)])
    assert [issue.code for issue in lint(spec)] == ["unmatched_outcome"]


def test_lint_outcome_matched_case_insensitively():
    p1, _ = validate_stage_payload(
        "P1", {"Model_Purpose": {"outcome_variables": {"A": "count"}}}
    )
    spec = _spec_with({"a": _dynamics(order=1)})
    merged, _ = merge(
        [make_fragment("P1", {}, p1)]
        + [make_fragment("P2", {}, validate_stage_payload("P2", {"Wolves": {}})[0])]
        + [
            make_fragment(
                "P3",
                {"AGENT_SET_NAME": "Wolves"},
                validate_stage_payload(
                    "P3", {"Wolves": {"a": {"data_type": "int"}}}, {"AGENT_SET_NAME": "Wolves"}
                )[0],
            )
        ]
    )
    assert all(issue.code != "unmatched_outcome" for issue in lint(merged))


def test_lint_empty_agent_set():
    p2, _ = validate_stage_payload("P2", {"Wolves": {"short_description": "w"}})
    spec, _ = merge([make_fragment("P2", {}, p2)])
    assert [issue.code for issue in lint(spec)] == ["empty_agent_set"]


def test_lint_empty_spec_clean():
    spec, _ = merge([])
    assert lint(spec) == []


# --- serialization ------------------------------------------------------------------


def test_canonical_top_level_order():
    spec, _ = merge(_wolves_fragments(), provenance=Provenance("h", "b", "t", "v"))
    blob = spec_to_canonical_json(spec)
    value = json.loads(blob)
    assert list(value) == ["provenance", "purpose", "agent_sets", "space", "model_level"]
    # nested keys sorted
    agent_set = value["agent_sets"][0]
    assert list(agent_set) == sorted(agent_set)
    assert blob.endswith("\n")


def test_fragment_round_trip():
    for fragment in _wolves_fragments():
        value = json.loads(canonical_json(fragment_to_json_value(fragment)))
        assert fragment_from_json_value(value) == fragment


def test_fragment_revalidation_fixpoint():
    """Serialize a fragment back to stage JSON, re-validate, get it back clean."""
    for fragment in _wolves_fragments():
        stage_payload = fragment_to_stage_payload(fragment)
        payload, issues = validate_stage_payload(
            fragment.stage, stage_payload, dict(fragment.bindings)
        )
        assert issues == []
        assert payload == fragment.payload


def test_spec_file_round_trip():
    spec, _ = merge(_wolves_fragments(), provenance=Provenance("h", "b", "t", "v"))
    value = json.loads(spec_to_canonical_json(spec))
    reloaded, issues = validate_specification(value)
    assert issues == []
    assert reloaded == spec
    # a second serialize yields identical bytes
    assert spec_to_canonical_json(reloaded) == spec_to_canonical_json(spec)


def test_validate_specification_empty_object():
    spec, issues = validate_specification({})
    assert spec is None
    missing = [issue for issue in issues if issue.code == "missing_key"]
    assert len(missing) == 5


def test_validate_specification_duplicate_variable():
    spec, _ = merge(_wolves_fragments())
    value = json.loads(spec_to_canonical_json(spec))
    value["agent_sets"][0]["variables"].append(
        dict(value["agent_sets"][0]["variables"][0])
    )
    reloaded, issues = validate_specification(value)
    assert reloaded is None
    assert any(issue.code == "duplicate_variable" for issue in issues)


def test_validate_specification_bad_enum():
    spec, _ = merge(_wolves_fragments())
    value = json.loads(spec_to_canonical_json(spec))
    value["agent_sets"][0]["variables"][0]["data_type"] = "floatish"
    reloaded, issues = validate_specification(value)
    assert reloaded is None
    assert any(issue.code == "invalid_enum" for issue in issues)


def test_validate_specification_negative_order():
    spec, _ = merge(_wolves_fragments())
    value = json.loads(spec_to_canonical_json(spec))
    value["agent_sets"][0]["variables"][0]["dynamics"]["execution_order"] = -1
    reloaded, issues = validate_specification(value)
    assert reloaded is None
    assert any(issue.code == "invalid_value" for issue in issues)


@given(st.text(max_size=30))
def test_normalize_frequency_total(raw):
    assert normalize_frequency(raw) in ("setup_once", "every_tick", "conditional", "unknown")


@given(st.text(max_size=30))
def test_normalize_data_type_total(raw):
    assert normalize_data_type(raw) in (
        "integer", "real", "boolean", "string", "categorical", "list", "unknown"
    )
