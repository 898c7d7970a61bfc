import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hltm import prompts
from hltm.adaptation import QueryPatternProfile, mine_profile, select_window, template
from hltm.backends import MockEmbedder, MockGenerator
from hltm.config import Config
from hltm.errors import NotApproved, UnknownProfile, WindowEmpty
from hltm.memory import MemoryBuilder
from hltm.models import Document, parse_timestamp
from hltm.retrieval import rule_parse
from conftest import ScriptedGenerator, small_engine

TS = "2026-03-01T00:00:00Z"


def test_three_templated_queries_form_one_pattern():
    qs = [(f"typical location for title={x} roles?", TS) for x in ("engineer", "designer", "analyst")]
    prof = mine_profile(qs, rule_parse, min_support=3)
    assert prof.patterns == [("typical location for title=<title> roles?", 3)]
    assert prof.facet_names == [("title", 3)]


def test_unique_queries_give_empty_profile():
    qs = [("a b", TS), ("c d", TS), ("e f", TS)]
    prof = mine_profile(qs, rule_parse, min_support=2)
    assert prof.patterns == [] and prof.facet_names == [] and prof.is_empty()


def test_facet_name_support_counting():
    qs = [(f"jobs location=c{i}", TS) for i in range(5)] + [(f"misc {i}", TS) for i in range(5)]
    prof = mine_profile(qs, rule_parse, min_support=3)
    assert ("location", 5) in prof.facet_names


def test_min_support_must_be_at_least_two():
    with pytest.raises(ValueError):
        mine_profile([("q", TS)], rule_parse, min_support=1)


def test_template_normalization():
    assert template("Jobs  in  SAN francisco now", [("location", "San Francisco")]) == \
        "jobs in <location> now"
    # longer value wins over a contained shorter one
    assert template("staff engineer role", [("a", "engineer"), ("b", "staff engineer")]) == \
        "<b> role"


def test_window_selection():
    qs = [("old", "2025-01-01"), ("new1", "2026-03-01"), ("new2", "2026-03-10")]
    rows, bounds = select_window(qs, days=30)
    assert [t for t, _ in rows] == ["new1", "new2"]
    rows, _ = select_window(qs, days=30, max_queries=1)
    assert [t for t, _ in rows] == ["new2"]
    rows, _ = select_window(qs, window=("2024-12-01", "2025-02-01"))
    assert [t for t, _ in rows] == ["old"]
    with pytest.raises(WindowEmpty):
        select_window([])
    with pytest.raises(WindowEmpty):
        select_window(qs, window=("2020-01-01", "2020-02-01"))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["location", "title", "skill"]),
                          st.sampled_from(["sf", "nyc", "austin", "engineer", "python"]),
                          st.sampled_from(["jobs", "roles for", "typical pay"])),
                min_size=1, max_size=30),
       st.integers(2, 6))
def test_threshold_soundness_and_determinism(rows, min_support):
    qs = [(f"{prefix} {k}={v}", TS) for k, v, prefix in rows]
    a = mine_profile(qs, rule_parse, min_support=min_support)
    b = mine_profile(list(reversed(qs)), rule_parse, min_support=min_support)
    assert a.to_dict() == b.to_dict()
    assert all(n >= min_support for _, n in a.patterns + a.facet_names)
    for ranked in (a.patterns, a.facet_names):
        assert ranked == sorted(ranked, key=lambda kv: (-kv[1], kv[0]))


def test_review_gate_and_apply():
    eng, ids = small_engine()
    qs = [(f"location=c{i} jobs", TS) for i in range(4)]
    prof = eng.mine_profile(qs)
    with pytest.raises(NotApproved):
        eng.apply_profile(prof.id)
    with pytest.raises(UnknownProfile):
        eng.approve_profile("nope")
    eng.approve_profile(prof.id)
    assert eng.apply_profile(prof.id).approved
    assert eng.profile.id == prof.id
    assert eng.apply_profile(None) is None and eng.profile is None


def test_review_mode_off_allows_unapproved():
    eng, _ = small_engine(config=Config.from_dict({"adaptation": {"review_mode": False}}))
    prof = eng.mine_profile([(f"location=x{i}", TS) for i in range(3)])
    assert eng.apply_profile(prof.id).id == prof.id


def _prompts_for(profile):
    gen = ScriptedGenerator([{"facets": {"a": "1"}}, {"question_answers": []}, "a: 1", "a: 1."])
    b = MemoryBuilder(gen, MockEmbedder())
    b.build_leaf_memory("n", [Document("d", "n", parse_timestamp(TS), "a: 1")], profile)
    return [(r.task, r.system_message, r.user_message) for r in gen.requests]


def test_empty_profile_leaves_prompts_unchanged():
    assert _prompts_for(QueryPatternProfile()) == _prompts_for(None)


def test_profile_injects_emphasis_and_patterns():
    prof = QueryPatternProfile(patterns=[("jobs in <location>", 4)], facet_names=[("location", 5)])
    sent = {task: system for task, system, _ in _prompts_for(prof)}
    assert sent["facets"].startswith(prompts.FACET_SYSTEM)
    assert "location" in sent["facets"][len(prompts.FACET_SYSTEM):]
    assert "prioritize questions matching these patterns: jobs in <location>" in sent["qa"].lower()
    assert "location" in sent["detailed_summary"][len(prompts.DETAILED_SUMMARY_SYSTEM):]


def test_profile_is_hint_not_filter_under_mock():
    prof = QueryPatternProfile(patterns=[("p <x>", 9)], facet_names=[("zzz", 9)])
    docs = [Document("d", "n", parse_timestamp(TS), "a: 1\nb: 2")]
    b = MemoryBuilder(MockGenerator(), MockEmbedder())
    plain = b.build_leaf_memory("n", docs)
    hinted = b.build_leaf_memory("n", docs, prof)
    assert hinted.content() == plain.content()
    assert len(hinted.facets) >= len(plain.facets) and len(hinted.qa) >= len(plain.qa)


def test_profile_round_trip():
    prof = QueryPatternProfile([("a", 3)], [("b", 4)], ("s", "e"), 3, True)
    again = QueryPatternProfile.from_dict(prof.to_dict())
    assert again.to_dict() == prof.to_dict() and again.id == prof.id
