"""Turns retained call traces into one signature per function.

Rare traces are dropped first (``filter_traces``).  The rest are transposed
into per-position columns; a column whose entries all specialize the same
generic is rebuilt from its argument columns, a varying column whose exact
sequence shows up at more than one position becomes a constrained type
variable, and anything else becomes a simplified union.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

from .trace_model import (
    ANY, ELLIPSIS, NEVER, NONE, CallTrace, ClassInfo, FunctionKey, Kind, TypeSpec,
    concrete, protocol, sort_key, trace_record, typevar, union_of,
)
from . import shapes

logger = logging.getLogger(__name__)

ClassTable = Mapping[tuple[str, str], ClassInfo]

YIELD_SLOT = "<yield>"
SEND_SLOT = "<send>"
RETURN_SLOT = "<return>"


class _Absent:
    __slots__ = ()

    def __repr__(self) -> str:
        return "ABSENT"


ABSENT = _Absent()


@dataclass
class Signature:
    fn: FunctionKey | None
    params: list[tuple[str, TypeSpec | None, bool]]
    return_type: TypeSpec
    typevars: dict[int, tuple[TypeSpec, ...]] = field(default_factory=dict)
    imports_needed: set[tuple[str, str]] = field(default_factory=set)
    yield_type: TypeSpec | None = None
    send_type: TypeSpec | None = None
    generator_return: TypeSpec | None = None

    def param(self, name: str) -> TypeSpec | None:
        for n, t, _ in self.params:
            if n == name:
                return t
        raise KeyError(name)

    def all_types(self) -> Iterable[TypeSpec]:
        for _, t, _ in self.params:
            if t is not None:
                yield t
        yield self.return_type
        for c in self.typevars.values():
            yield from c

    def refresh_imports(self) -> None:
        self.imports_needed = imports_for(self.all_types())


def imports_for(types: Iterable[TypeSpec]) -> set[tuple[str, str]]:
    out: set[tuple[str, str]] = set()
    for t in types:
        for s in t.walk():
            if s.kind in (Kind.CONCRETE, Kind.GENERIC, Kind.PROTOCOL, Kind.SHAPED) and s.module:
                out.add((s.module, s.name))
    return out


# --- filtering ---------------------------------------------------------------

def _trace_text(trace: CallTrace) -> str:
    rec = trace_record(FunctionKey("", "", 1), trace, 1)
    del rec["fn"], rec["count"]
    return json.dumps(rec, ensure_ascii=False)


def order_traces(traces: Mapping[CallTrace, int] | Iterable[tuple[CallTrace, int]]) -> list[tuple[CallTrace, int]]:
    items = list(traces.items()) if isinstance(traces, Mapping) else list(traces)
    items.sort(key=lambda tc: (-tc[1], _trace_text(tc[0])))
    return items


def filter_traces(traces, coverage: float = 0.8) -> tuple[list[tuple[CallTrace, int]], list[tuple[CallTrace, int]]]:
    """Keeps the shortest count-ordered prefix covering ``coverage`` of all calls.

    Returns ``(retained, anomalies)``, both as ``(trace, count)`` lists.
    """
    if not 0 < coverage <= 1:
        raise ValueError(f"coverage must be in (0, 1], got {coverage}")
    items = order_traces(traces)
    if not items:
        raise ValueError("filter_traces needs at least one trace")
    total = sum(n for _, n in items)
    target = Fraction(str(coverage))
    cum = 0
    for i, (_, n) in enumerate(items):
        cum += n
        if Fraction(cum, total) >= target:
            return items[:i + 1], items[i + 1:]
    return items, []


# --- union simplification ----------------------------------------------------

_NUMERIC_RANK = {"bool": 0, "int": 1, "float": 2, "complex": 3}


def _numeric(t: TypeSpec) -> int | None:
    if t.kind is Kind.CONCRETE and t.module == "":
        return _NUMERIC_RANK.get(t.name)
    return None


def _mro(t: TypeSpec, classes: ClassTable) -> tuple[tuple[str, str], ...] | None:
    if t.kind is Kind.SELF:
        key = (t.module, t.name)
    elif t.kind is Kind.CONCRETE:
        key = (t.module or "builtins", t.name)
    else:
        return None
    info = classes.get(key)
    if info is None and key[0] == "builtins":
        info = classes.get(("", t.name))
    return info.ancestors if info is not None else None


def _attrs(key: tuple[str, str], classes: ClassTable) -> frozenset[str] | None:
    info = classes.get(key)
    if info is None and key[0] in ("", "builtins"):
        info = classes.get(("builtins" if key[0] == "" else "", key[1]))
    return info.attrs if info is not None else None


def _is_public(key: tuple[str, str]) -> bool:
    return not any(part.startswith("_") for part in key[0].split(".") + key[1].split("."))


def _as_spec(key: tuple[str, str]) -> TypeSpec:
    return concrete(key[0], key[1])


def _norm(key: tuple[str, str]) -> tuple[str, str]:
    return ("", key[1]) if key[0] == "builtins" else key


def simplify_union(types: Iterable[TypeSpec], classes: ClassTable | None = None) -> TypeSpec:
    """Forms the union of ``types``, replacing groups of members with a common supertype.

    Numeric members follow the int -> float -> complex tower.  Other concrete
    classes are merged into a base class only when that base defines every
    attribute the replaced members have in common (``classes`` supplies the
    runtime MRO and attribute sets).
    """
    classes = classes or {}
    flat = union_of(types)
    members = list(flat.args) if flat.kind is Kind.UNION else [flat]

    if len(members) > 1:
        members = [m for m in members if m.kind is not Kind.NEVER]
    if any(m.kind is Kind.ANY for m in members):
        return ANY
    if len(members) <= 1:
        return members[0] if members else NEVER

    ranks = [r for m in members if (r := _numeric(m)) is not None]
    if len(ranks) > 1:
        top = max(ranks)
        if top == 0:
            top = 1
        members = [m for m in members if _numeric(m) is None] + [concrete("", ["bool", "int", "float", "complex"][top])]

    members = _merge_subclasses(members, classes)
    members = _merge_common_bases(members, classes)
    return union_of(members)


def _merge_subclasses(members: list[TypeSpec], classes: ClassTable) -> list[TypeSpec]:
    keys = {}
    for m in members:
        if m.kind is Kind.CONCRETE and _numeric(m) is None:
            keys[_norm((m.module, m.name))] = m
    out = []
    for m in members:
        mro = _mro(m, classes) if m.kind is Kind.CONCRETE else None
        if mro and any(_norm(b) in keys and _norm(b) != _norm((m.module, m.name)) for b in mro[1:]):
            continue
        out.append(m)
    return out


def _merge_common_bases(members: list[TypeSpec], classes: ClassTable) -> list[TypeSpec]:
    while True:
        conc = [m for m in members if m.kind is Kind.CONCRETE and _numeric(m) is None]
        mros = {m: _mro(m, classes) for m in conc}
        member_keys = {_norm((m.module, m.name)) for m in conc}
        candidates: dict[tuple[str, str], list[TypeSpec]] = {}
        depth: dict[tuple[str, str], int] = {}
        for m in conc:
            for i, b in enumerate((mros[m] or ())[1:], start=1):
                b = _norm(b)
                if b in (("", "object"),) or b in member_keys or not _is_public(b):
                    continue
                candidates.setdefault(b, []).append(m)
                depth[b] = min(depth.get(b, i), i)
        best = None
        for b, group in sorted(candidates.items(), key=lambda kv: (-len(kv[1]), depth[kv[0]], kv[0])):
            if len(group) < 2:
                continue
            battrs = _attrs(b, classes)
            gattrs = [_attrs(_norm((g.module, g.name)), classes) for g in group]
            if battrs is None or any(a is None for a in gattrs):
                continue
            shared = frozenset.intersection(*gattrs)  # type: ignore[arg-type]
            if shared <= battrs:
                best = (b, group)
                break
        if best is None:
            return members
        b, group = best
        members = [m for m in members if m not in group] + [_as_spec(b)]


def is_subtype(a: TypeSpec, b: TypeSpec, classes: ClassTable | None = None) -> bool:
    """Conservative nominal subtype check over inferred types."""
    classes = classes or {}
    if a == b or b.kind is Kind.ANY or a.kind is Kind.NEVER:
        return True
    if a.kind is Kind.UNION:
        return all(is_subtype(m, b, classes) for m in a.args)
    if b.kind is Kind.UNION:
        return any(is_subtype(a, m, classes) for m in b.args)
    if b.kind is Kind.CONCRETE and b.module == "" and b.name == "object":
        return True
    ra, rb = _numeric(a), _numeric(b)
    if ra is not None and rb is not None:
        return ra <= rb
    if a.kind in (Kind.CONCRETE, Kind.SELF) and b.kind in (Kind.CONCRETE, Kind.SELF):
        if a.kind is Kind.SELF and b.kind is Kind.SELF:
            return True
        mro = _mro(a, classes)
        target = _norm((b.module, b.name))
        return bool(mro) and target in {_norm(x) for x in mro}
    return False


# --- Algorithm: column pattern search ----------------------------------------

def _generic_identity(t: TypeSpec) -> tuple | None:
    if not t.is_generic:
        return None
    return (t.kind, t.module, t.name, len(t.args), tuple(i for i, a in enumerate(t.args) if a == ELLIPSIS))


def _shared_generic(present: Sequence[TypeSpec]) -> bool:
    if not present:
        return False
    ident = _generic_identity(present[0])
    return ident is not None and all(_generic_identity(t) == ident for t in present[1:])


def _shared_shape_base(present: Sequence[TypeSpec]) -> bool:
    if not present or present[0].kind is not Kind.SHAPED:
        return False
    head = present[0]
    return all(t.kind is Kind.SHAPED and (t.module, t.name, t.args) == (head.module, head.name, head.args)
               for t in present[1:])


def _transpose(col: Sequence) -> list[list]:
    arity = len(next(t for t in col if t is not ABSENT).args)
    return [[ABSENT if t is ABSENT else t.args[i] for t in col] for i in range(arity)]


class _Rebuilder:
    def __init__(self, classes: ClassTable):
        self.classes = classes
        self.seen: Counter[tuple] = Counter()
        self.typevars: dict[tuple, int] = {}
        self.constraints: dict[int, tuple[TypeSpec, ...]] = {}
        self.shape_cols: list[list] = []

    def count(self, col: list) -> None:
        present = [t for t in col if t is not ABSENT]
        if _shared_generic(present):
            for sub in _transpose(col):
                self.count(sub)
        elif _shared_shape_base(present):
            pass
        elif len(set(present)) >= 2:
            self.seen[tuple(col)] += 1

    def rebuild(self, col: list) -> TypeSpec:
        present = [t for t in col if t is not ABSENT]
        if _shared_generic(present):
            return present[0].replace_args(self.rebuild(sub) for sub in _transpose(col))
        if _shared_shape_base(present):
            idx = len(self.shape_cols)
            self.shape_cols.append([t if t is ABSENT else t.shape for t in col])
            head = present[0]
            return TypeSpec(Kind.SHAPED, head.module, head.name, head.args, shape=(f"#{idx}",))
        key = tuple(col)
        distinct = set(present)
        if len(distinct) >= 2 and self.seen[key] >= 2:
            if key not in self.typevars:
                tid = len(self.typevars) + 1
                self.typevars[key] = tid
                self.constraints[tid] = tuple(sorted(distinct, key=sort_key))
            return typevar(self.typevars[key])
        return simplify_union(present, self.classes)


def _fill_shapes(t: TypeSpec, tokens: list[tuple | None]) -> TypeSpec:
    if t.kind is Kind.SHAPED and t.shape and isinstance(t.shape[0], str) and t.shape[0].startswith("#"):
        dims = tokens[int(t.shape[0][1:])]
        if dims is None:
            return t.args[0]  # mixed ranks: the bare array type
        return TypeSpec(Kind.SHAPED, t.module, t.name, t.args, shape=dims)
    if t.args:
        return t.replace_args(_fill_shapes(a, tokens) for a in t.args)
    return t


def columns(traces: Sequence[CallTrace]) -> tuple[list[str], dict[str, list]]:
    """Transposes traces into named columns, aligning arguments by parameter name."""
    names: list[str] = []
    for tr in traces:
        for n in tr.arg_names:
            if n not in names:
                names.append(n)
    cols: dict[str, list] = {}
    for n in names:
        col = []
        for tr in traces:
            try:
                col.append(tr.arg_types[tr.arg_names.index(n)])
            except ValueError:
                col.append(ABSENT)
        cols[n] = col
    if any(tr.yield_type is not None for tr in traces):
        cols[YIELD_SLOT] = [ABSENT if tr.yield_type is None else tr.yield_type for tr in traces]
    if any(tr.send_type is not None for tr in traces):
        cols[SEND_SLOT] = [ABSENT if tr.send_type is None else tr.send_type for tr in traces]
    cols[RETURN_SLOT] = [tr.return_type for tr in traces]
    return names, cols


def generalize(traces: Sequence[CallTrace], fn: FunctionKey | None = None,
               classes: ClassTable | None = None) -> Signature:
    if not traces:
        raise ValueError("generalize needs at least one trace")
    names, cols = columns(traces)
    rb = _Rebuilder(classes or {})
    for col in cols.values():
        rb.count(col)
    built = {slot: rb.rebuild(col) for slot, col in cols.items()}

    if rb.shape_cols:
        tokens = shapes.generalize_shapes(rb.shape_cols)
        built = {slot: _fill_shapes(t, tokens) for slot, t in built.items()}

    params: list[tuple[str, TypeSpec | None, bool]] = []
    for n in names:
        t = built[n]
        if n.startswith("*") and t.kind is Kind.NEVER:
            params.append((n, None, False))  # variadic never observed non-empty
        else:
            params.append((n, t, False))

    ret = built[RETURN_SLOT]
    y = built.get(YIELD_SLOT)
    s = built.get(SEND_SLOT)
    sig = Signature(fn, params, ret, dict(rb.constraints))
    if y is not None or s is not None:
        sig.yield_type = y if y is not None else NEVER
        sig.send_type = s
        sig.generator_return = ret
        sig.return_type = generator_type(sig.yield_type, s, ret)
    sig.refresh_imports()
    return sig


def _trivial(t: TypeSpec | None) -> bool:
    return t is None or t.kind in (Kind.NONE, Kind.NEVER)


def generator_type(y: TypeSpec, s: TypeSpec | None, r: TypeSpec) -> TypeSpec:
    if _trivial(s) and _trivial(r):
        return protocol("collections.abc", "Iterator", y)
    return protocol("collections.abc", "Generator", y, s if s is not None else NONE, r)
