"""Acceptance gate: one PASS/FAIL line per criterion, plus a normal test result.

Run just this file with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

from __future__ import annotations

import contextlib
import glob
import io
import itertools
import json
import os
import random
import re
import shutil
import statistics
import subprocess
import sys
import time

import pytest

import harness
import oracles
from conftest import FIXTURES, run_tool
from typesampler.annotation_writer import render_signature
from typesampler.generalizer import filter_traces, generalize, simplify_union
from typesampler.runtime_agent import SamplingController
from typesampler.trace_model import (
    NONE, CallTrace, FunctionKey, TraceStore, concrete, deserialize_store, generic, read_store, serialize_store,
    trace_record, union_of,
)

LITMUS = os.path.join(FIXTURES, "litmus")
GOLDEN = os.path.join(LITMUS, "golden")
BENCH = os.path.join(FIXTURES, "bench")
PROGRAMS = os.path.join(FIXTURES, "programs")
LITMUS_NAMES = ("interdependent", "unnamed", "inheritance", "edge_case")


@pytest.fixture
def verdict(request, capsys):
    """Prints the criterion's PASS/FAIL line whichever way the body ends."""
    @contextlib.contextmanager
    def check(number: int, title: str):
        ok = False
        detail = ""
        try:
            yield
            ok = True
        except BaseException as e:
            detail = f" ({type(e).__name__}: {str(e).splitlines()[0][:160] if str(e) else ''})"
            raise
        finally:
            with capsys.disabled():
                print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {title}{detail}")
    return check


def _squash(text: str) -> str:
    return re.sub(r"\s+", "", text)


def _mypy(*files: str, cwd: str) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "mypy", "--python-version", "3.12", "--no-incremental",
                           "--cache-dir", os.devnull, "--no-error-summary", *files],
                          cwd=cwd, capture_output=True, text=True, timeout=300)


def _litmus_outputs(tmp_path) -> dict[str, str]:
    for name in LITMUS_NAMES:
        shutil.copy(os.path.join(LITMUS, f"{name}.py"), tmp_path)
        r = run_tool("run", "-o", f"{name}.jsonl", f"{name}.py", cwd=tmp_path)
        assert r.returncode == 0, r.stderr
        r = run_tool("annotate", "--no-backup", "--report", f"{name}.report.jsonl", f"{name}.jsonl", cwd=tmp_path)
        assert r.returncode == 0, r.stderr
    return {name: (tmp_path / f"{name}.py").read_text() for name in LITMUS_NAMES}


def test_criterion_1_litmus(tmp_path, verdict):
    with verdict(1, "litmus programs match goldens; mypy: 0 errors on three, one missing-return on edge case"):
        out = _litmus_outputs(tmp_path)
        for name in LITMUS_NAMES:
            with open(os.path.join(GOLDEN, f"{name}.py"), encoding="utf-8") as f:
                assert _squash(out[name]) == _squash(f.read()), f"{name} differs from golden"
        assert "def add[T1: (int, str)](a: T1, b: T1) -> T1" in out["interdependent"]
        assert "def f(a: ValuesView[int], b: int|None=None) -> list[int]" in out["unnamed"]
        assert "def zoom(self: Self, factor: float) -> Self" in out["inheritance"]
        assert "x: tuple[float, float]" in out["inheritance"]
        assert "medium: Medium|NonStandardMedium" in out["inheritance"]
        assert "def is_value_ok(value: int) -> bool" in out["edge_case"]
        clean = _mypy("interdependent.py", "unnamed.py", "inheritance.py", cwd=tmp_path)
        assert clean.returncode == 0 and clean.stdout.strip() == "", clean.stdout
        edge = _mypy("edge_case.py", cwd=tmp_path)
        errors = [line for line in edge.stdout.splitlines() if ": error:" in line]
        assert len(errors) == 1 and "Missing return statement" in errors[0], edge.stdout


def _timed(cmd: list[str], cwd: str) -> float:
    start = time.perf_counter()
    subprocess.run(cmd, cwd=cwd, check=True, capture_output=True, timeout=600)
    return time.perf_counter() - start


@pytest.mark.slow
def test_criterion_2_overhead(tmp_path, verdict):
    with verdict(2, "overhead: median-of-3 slowdown <= 1.0x per benchmark, mean <= 0.5x"):
        slowdowns = {}
        for path in sorted(glob.glob(os.path.join(BENCH, "*.py"))):
            name = os.path.basename(path)
            shutil.copy(path, tmp_path)
            base, tool = [], []
            for _ in range(3):
                base.append(_timed([sys.executable, name], str(tmp_path)))
                tool.append(_timed([sys.executable, "-m", "typesampler", "run", "-o", "t.jsonl", name],
                                   str(tmp_path)))
            b, t = statistics.median(base), statistics.median(tool)
            slowdowns[name] = t / b - 1
            assert b >= 5.0, f"{name} baseline {b:.2f}s is under 5 s"
        report = ", ".join(f"{k}={v:.2f}x" for k, v in slowdowns.items())
        print(f"\nslowdowns: {report}; mean={statistics.mean(slowdowns.values()):.2f}x")
        assert 3 <= len(slowdowns) <= 5
        assert all(v <= 1.0 for v in slowdowns.values()), report
        assert statistics.mean(slowdowns.values()) <= 0.5, report


def test_criterion_3_coverage(tmp_path, verdict):
    with verdict(3, "200 distinct functions called once each all have a trace"):
        lines = [f"def fn_{i}(x):\n    return x + {i}\n" for i in range(200)]
        lines.append("for i in range(200):\n    globals()[f'fn_{i}'](i)\n")
        (tmp_path / "many.py").write_text("\n".join(lines))
        r = run_tool("run", "-o", "t.jsonl", "many.py", cwd=tmp_path)
        assert r.returncode == 0, r.stderr
        store = read_store(tmp_path / "t.jsonl")
        traced = {fn.qualified_name for fn, ts in store.entries.items() if ts}
        assert traced == {f"fn_{i}" for i in range(200)}


def test_criterion_4_controller(verdict):
    with verdict(4, "re-enable fires iff windowed self-fraction < budget, all 2^10 patterns, window 10"):
        window = 10
        for budget in (0.05, 0.25, 0.5, 0.95):
            for pattern in itertools.product((False, True), repeat=window):
                c = SamplingController(budget, window=window)
                c.disable("loc")
                for i, tick in enumerate(pattern):
                    seen = pattern[:i + 1]
                    expected = sum(seen) / len(seen) < budget
                    assert c.profile_tick(tick) is expected, (budget, pattern, i)
                    if expected:
                        assert not c.disabled_locations
                    c.disable("loc")
                # a second pass exercises the sliding window once it is full
                for i, tick in enumerate(pattern):
                    recent = (pattern + pattern[:i + 1])[-window:]
                    assert c.profile_tick(tick) is (sum(recent) / window < budget)


def _spec(t):
    if isinstance(t, tuple):
        return generic("", "list", _spec(t[1]))
    return NONE if t == "None" else concrete("", t)


def test_criterion_5_generalizer_oracle(verdict):
    with verdict(5, "generalize equals the brute-force oracle on 10,000 random trace sets"):
        rng = random.Random(20240501)
        universe = oracles.all_types(2)
        cases = 0
        for _ in range(10_000):
            positions = rng.randint(1, 3)
            rows = [tuple(rng.choice(universe) for _ in range(positions + 1)) for _ in range(rng.randint(1, 4))]
            traces = [CallTrace(tuple(f"p{i}" for i in range(positions)), tuple(map(_spec, row[:-1])),
                                _spec(row[-1])) for row in rows]
            assert render_signature(generalize(traces)) == oracles.generalize(rows), rows
            cases += 1
        assert cases >= 10_000


def _serialized(tr: CallTrace) -> str:
    rec = trace_record(FunctionKey("", "", 1), tr, 1)
    del rec["fn"], rec["count"]
    return json.dumps(rec, ensure_ascii=False)


def test_criterion_6_filter_oracle(verdict):
    with verdict(6, "filter_traces equals the minimal-prefix oracle"):
        rng = random.Random(7)
        universe = oracles.all_types(1)
        for _ in range(3000):
            n = rng.randint(1, 8)
            kinds = rng.sample(universe, n)
            traces = {CallTrace(("p0",), (_spec(k),), NONE): rng.randint(1, 100) for k in kinds}
            for coverage in (0.5, 0.8, 0.95):
                kept, dropped = filter_traces(traces, coverage)
                order = oracles.filter_order({_serialized(t): c for t, c in traces.items()})
                k = oracles.minimal_prefix(order, coverage)
                assert [_serialized(t) for t, _ in kept] == [s for s, _ in order[:k]]
                assert len(kept) + len(dropped) == len(traces)


def _random_store(rng: random.Random) -> TraceStore:
    atoms = [concrete("", "int"), concrete("", "str"), NONE, concrete("pkg.mod", "Thing"),
             generic("", "list", concrete("", "float")), union_of([concrete("", "int"), NONE])]
    store = TraceStore(seed=rng.choice([None, rng.randrange(2**31)]))
    for _ in range(rng.randint(0, 5)):
        fn = FunctionKey(rng.choice(["/a.py", "/b/ü.py", "C:\\x.py"]), rng.choice(["f", "C.m", "g.<locals>.h"]),
                         rng.randint(1, 999))
        for _ in range(rng.randint(1, 3)):
            names = rng.sample(["a", "b", "*args", "**kw"], rng.randint(0, 3))
            gen = rng.random() < 0.3
            tr = CallTrace(names, [rng.choice(atoms) for _ in names], rng.choice(atoms),
                           rng.choice(atoms) if gen else None, rng.choice(atoms) if gen and rng.random() < 0.5 else None)
            store.add(fn, tr, rng.randint(1, 10**12))
    return store


def test_criterion_7_roundtrip_and_determinism(tmp_path, verdict):
    with verdict(7, "1,000 store round-trips are identities; annotate is byte-identical over 3 runs"):
        rng = random.Random(99)
        for _ in range(1000):
            store = _random_store(rng)
            data = serialize_store(store)
            back = deserialize_store(data)
            assert back.entries == store.entries and back.seed == store.seed
            assert serialize_store(back) == data

        for name in LITMUS_NAMES:
            shutil.copy(os.path.join(LITMUS, f"{name}.py"), tmp_path)
            assert run_tool("run", "-o", f"{name}.jsonl", f"{name}.py", cwd=tmp_path).returncode == 0
        outputs = []
        for i in range(3):
            r = run_tool("annotate", "--diff", "--report", f"report{i}.jsonl",
                         *[f"{n}.jsonl" for n in LITMUS_NAMES], cwd=tmp_path)
            assert r.returncode == 0, r.stderr
            outputs.append((r.stdout.encode(), (tmp_path / f"report{i}.jsonl").read_bytes()))
        assert outputs[0] == outputs[1] == outputs[2]
        assert outputs[0][0]


def test_criterion_8_non_interference(verdict):
    with verdict(8, "20 programs: stdout, exit status and exception type identical with and without the agent"):
        programs = sorted(glob.glob(os.path.join(PROGRAMS, "*.py")))
        assert len(programs) == 20
        for p in programs:
            plain, traced = harness.run_plain(p), harness.run_traced(p)
            assert plain == traced, (os.path.basename(p), plain, traced)


def test_criterion_9_numeric_tower(verdict):
    with verdict(9, "numeric tower table"):
        i, f, c, s = (concrete("", n) for n in ("int", "float", "complex", "str"))
        assert simplify_union([i, f]) == f
        assert simplify_union([f, c]) == c
        assert simplify_union([i, f, c]) == c
        assert simplify_union([i, s]) == union_of([i, s])
        assert render_signature(generalize([CallTrace(("x",), (i,), NONE), CallTrace(("x",), (f,), NONE)])) \
            == "(x: float) -> None"
