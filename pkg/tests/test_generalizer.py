from __future__ import annotations

import json

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from typesampler.annotation_writer import render_signature
from typesampler.generalizer import filter_traces, generalize, is_subtype, order_traces, simplify_union
from typesampler.trace_model import (
    ANY, NEVER, NONE, CallTrace, ClassInfo, FunctionKey, Kind, concrete, generic, protocol, trace_record,
    typevar, union_of,
)

INT, STR, FLOAT, COMPLEX, BOOL = (concrete("", n) for n in ("int", "str", "float", "complex", "bool"))


def spec(t):
    if isinstance(t, tuple):
        return generic("", "list", spec(t[1]))
    return NONE if t == "None" else concrete("", t)


def trace(*types, names=None) -> CallTrace:
    *args, ret = types
    names = names or tuple(f"p{i}" for i in range(len(args)))
    return CallTrace(names, tuple(args), ret)


def serialized(tr: CallTrace) -> str:
    rec = trace_record(FunctionKey("", "", 1), tr, 1)
    del rec["fn"], rec["count"]
    return json.dumps(rec, ensure_ascii=False)


class TestFilter:
    def test_dominant_trace(self):
        a, b, c = trace(INT, INT), trace(STR, STR), trace(FLOAT, FLOAT)
        kept, dropped = filter_traces({a: 8, b: 1, c: 1}, 0.8)
        assert kept == [(a, 8)]
        assert {t for t, _ in dropped} == {b, c}

    def test_single_trace(self):
        a = trace(INT, INT)
        for cov in (0.01, 0.5, 1.0):
            assert filter_traces({a: 3}, cov) == ([(a, 3)], [])

    def test_even_split_keeps_both(self):
        a, b = trace(INT, INT), trace(STR, STR)
        kept, dropped = filter_traces({a: 5, b: 5}, 0.8)
        assert len(kept) == 2 and not dropped

    def test_ties_are_ordered_by_serialized_form(self):
        a, b = trace(STR, STR), trace(INT, INT)
        order = [t for t, _ in order_traces({a: 2, b: 2})]
        assert order == sorted([a, b], key=serialized)

    def test_bad_coverage(self):
        with pytest.raises(ValueError):
            filter_traces({trace(INT): 1}, 0)

    @given(st.lists(st.integers(1, 100), min_size=1, max_size=8), st.sampled_from([0.5, 0.8, 0.95]))
    def test_matches_minimal_prefix_oracle(self, counts, coverage):
        traces = {trace(spec(t), INT): n for t, n in zip(oracles.all_types(1), counts)}
        kept, dropped = filter_traces(traces, coverage)
        order = oracles.filter_order({serialized(t): n for t, n in traces.items()})
        k = oracles.minimal_prefix(order, coverage)
        assert [serialized(t) for t, _ in kept] == [s for s, _ in order[:k]]
        assert len(kept) + len(dropped) == len(traces)
        total = sum(counts)
        share = sum(n for _, n in kept)
        for _, n in kept:  # removing any retained trace drops below coverage
            assert (share - n) / total < coverage


class TestGeneralize:
    def test_interdependent(self):
        sig = generalize([trace(INT, INT, INT, names=("a", "b")), trace(STR, STR, STR, names=("a", "b"))])
        assert render_signature(sig) == "[T1: (int, str)](a: T1, b: T1) -> T1"

    def test_generic_argument_pattern(self):
        sig = generalize([trace(generic("", "list", INT), INT, names=("l",)),
                          trace(generic("", "list", STR), STR, names=("l",))])
        assert render_signature(sig) == "[T1: (int, str)](l: list[T1]) -> T1"

    def test_single_trace(self):
        sig = generalize([trace(FLOAT, BOOL, names=("x",))])
        assert render_signature(sig) == "(x: float) -> bool"
        assert sig.typevars == {}

    def test_crossed_columns(self):
        sig = generalize([trace(INT, STR, INT, names=("a", "b")), trace(STR, INT, STR, names=("a", "b"))])
        expect = oracles.generalize([("int", "str", "int"), ("str", "int", "str")])
        assert render_signature(sig).replace("a:", "p0:").replace("b:", "p1:") == expect
        assert render_signature(sig) == "[T1: (int, str)](a: T1, b: int|str) -> T1"

    def test_constant_columns_get_no_typevar(self):
        sig = generalize([trace(INT, INT), trace(INT, INT)])
        assert not sig.typevars

    def test_absent_default_and_optional(self):
        view = protocol("collections.abc", "ValuesView", INT)
        sig = generalize([trace(view, NONE, generic("", "list", INT), names=("a", "b")),
                          trace(view, INT, generic("", "list", INT), names=("a", "b"))])
        assert render_signature(sig) == "(a: ValuesView[int], b: int|None) -> list[int]"

    def test_name_alignment_with_missing_slot(self):
        sig = generalize([CallTrace(("a", "b"), (INT, STR), INT), CallTrace(("a",), (INT,), INT)])
        assert render_signature(sig) == "(a: int, b: str) -> int"

    def test_variadics_use_element_union(self):
        sig = generalize([CallTrace(("*args",), (INT,), NONE), CallTrace(("*args",), (STR,), NONE)])
        assert render_signature(sig) == "(*args: int|str) -> None"

    def test_generator_rendering(self):
        it = generalize([CallTrace((), (), NONE, INT)])
        assert render_signature(it) == "() -> Iterator[int]"
        gen = generalize([CallTrace((), (), STR, INT, FLOAT)])
        assert render_signature(gen) == "() -> Generator[int, float, str]"

    def test_imports_needed(self):
        sig = generalize([trace(protocol("collections.abc", "ValuesView", INT), generic("", "list", INT))])
        assert sig.imports_needed == {("collections.abc", "ValuesView")}

    @settings(max_examples=300)
    @given(st.data())
    def test_oracle_equivalence(self, data):
        universe = oracles.all_types(2)
        width = data.draw(st.integers(1, 3))
        rows = data.draw(st.lists(st.tuples(*[st.sampled_from(universe)] * width), min_size=1, max_size=4))
        sig = generalize([trace(*map(spec, row)) for row in rows])
        assert render_signature(sig) == oracles.generalize(rows)

    @given(st.lists(st.tuples(*[st.sampled_from(oracles.all_types(1))] * 3), min_size=1, max_size=4))
    def test_typevar_soundness(self, rows):
        traces = [trace(*map(spec, row)) for row in rows]
        sig = generalize(traces)
        slots = [t for _, t, _ in sig.params] + [sig.return_type]
        for tid, cons in sig.typevars.items():
            assert len(cons) >= 2
            positions = [i for i, t in enumerate(slots) if t == typevar(tid)]
            for tr in traces:
                values = {(tr.arg_types + (tr.return_type,))[i] for i in positions}
                assert len(values) == 1 and values.pop() in cons

    @given(st.tuples(*[st.sampled_from(oracles.all_types(2))] * 3))
    def test_stable_on_own_output(self, row):
        sig = generalize([trace(*map(spec, row))])
        again = generalize([trace(*[t for _, t, _ in sig.params], sig.return_type)])
        assert render_signature(again) == render_signature(sig)


class TestSimplifyUnion:
    @pytest.mark.parametrize("members, expect", [
        ([INT, FLOAT], FLOAT),
        ([FLOAT, COMPLEX], COMPLEX),
        ([INT, FLOAT, COMPLEX], COMPLEX),
        ([INT, STR], union_of([INT, STR])),
        ([INT], INT),
        ([BOOL, INT], INT),
        ([INT, NONE], union_of([INT, NONE])),
        ([INT, ANY], ANY),
        ([generic("", "list", NEVER), generic("", "list", INT)],
         union_of([generic("", "list", NEVER), generic("", "list", INT)])),
    ])
    def test_table(self, members, expect):
        assert simplify_union(members) == expect

    def classes(self):
        def info(name, mro, attrs):
            return ClassInfo("m", name, tuple(("m", n) for n in mro), frozenset(attrs))
        return {
            ("m", "Base"): info("Base", ["Base"], {"a", "b"}),
            ("m", "Left"): info("Left", ["Left", "Base"], {"a", "b", "c"}),
            ("m", "Right"): info("Right", ["Right", "Base"], {"a", "b", "c"}),
            ("m", "Thin"): info("Thin", ["Thin"], {"a"}),
            ("m", "X"): info("X", ["X", "Thin"], {"a", "z"}),
            ("m", "Y"): info("Y", ["Y", "Thin"], {"a", "z"}),
        }

    def test_subclass_absorbed_by_base(self):
        c = self.classes()
        assert simplify_union([concrete("m", "Left"), concrete("m", "Base")], c) == concrete("m", "Base")

    def test_base_must_cover_shared_surface(self):
        c = self.classes()
        # Left and Right share {a, b, c}; Base lacks c, so it cannot replace them
        lr = simplify_union([concrete("m", "Left"), concrete("m", "Right")], c)
        assert lr.kind is Kind.UNION
        # X and Y share {a, z}; Thin lacks z
        assert simplify_union([concrete("m", "X"), concrete("m", "Y")], c).kind is Kind.UNION

    def test_base_replaces_when_surface_matches(self):
        c = self.classes()
        c[("m", "Base")] = ClassInfo("m", "Base", (("m", "Base"),), frozenset({"a", "b", "c"}))
        assert simplify_union([concrete("m", "Left"), concrete("m", "Right")], c) == concrete("m", "Base")

    @given(st.lists(st.sampled_from(oracles.all_types(1)), min_size=1, max_size=5))
    def test_result_admits_every_member(self, members):
        specs = [spec(m) for m in members]
        result = simplify_union(specs)
        assert all(is_subtype(m, result) for m in specs)
