"""Shared data model: inferred types, call traces and the trace file format."""

from __future__ import annotations

import enum
import io
import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import Any, TextIO

MAX_COUNT = 2**63 - 1
FORMAT_NAME = "typesampler-traces"
FORMAT_VERSION = 1


class Kind(str, enum.Enum):
    CONCRETE = "concrete"
    GENERIC = "generic"
    UNION = "union"
    TYPEVAR = "typevar"
    SELF = "self"
    NEVER = "never"
    ANY = "any"
    NONE = "none"
    PROTOCOL = "protocol"
    SHAPED = "shape-annotated"


@dataclass(frozen=True)
class TypeSpec:
    """An inferred type.

    Unions are canonicalized on construction (flattened, deduplicated and
    sorted), so plain field equality already compares their members as sets.
    ``self`` specs keep the defining class in ``module``/``name`` so that
    targets without ``typing.Self`` can fall back to it.
    """

    kind: Kind
    module: str = ""
    name: str = ""
    args: tuple[TypeSpec, ...] = ()
    typevar_id: int = 0
    shape: tuple[int | str, ...] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.kind, Kind):
            object.__setattr__(self, "kind", Kind(self.kind))
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))
        if self.shape is not None and not isinstance(self.shape, tuple):
            object.__setattr__(self, "shape", tuple(self.shape))

        if self.kind is Kind.UNION:
            members = _canonical_members(self.args)
            if len(members) < 2:
                raise ValueError("a union needs at least two distinct members")
            object.__setattr__(self, "args", members)
        elif self.kind is Kind.NEVER and self.args:
            raise ValueError("Never takes no arguments")
        elif self.kind is Kind.TYPEVAR:
            if self.module or self.name or self.typevar_id < 1:
                raise ValueError("typevars carry only a positive id")
        if self.kind is Kind.SHAPED:
            if self.shape is None:
                raise ValueError("shape-annotated types need a shape")
        elif self.shape is not None:
            raise ValueError("only shape-annotated types carry a shape")

    def __str__(self) -> str:
        k = self.kind
        if k is Kind.ANY:
            return "Any"
        if k is Kind.NEVER:
            return "Never"
        if k is Kind.NONE:
            return "None"
        if k is Kind.SELF:
            return "Self"
        if k is Kind.TYPEVAR:
            return f"T{self.typevar_id}"
        if k is Kind.UNION:
            members = [str(a) for a in self.args if a.kind is not Kind.NONE]
            if len(members) < len(self.args):
                members.append("None")
            return "|".join(members)
        if k is Kind.SHAPED:
            dims = " ".join(str(d) for d in self.shape or ())
            return f'{self.name}[{self.args[0]}, "{dims}"]'
        if self.args:
            return f"{self.name}[{', '.join(str(a) for a in self.args)}]"
        if k is Kind.GENERIC and self.name == "tuple":
            return "tuple[()]"
        return self.name

    @property
    def is_generic(self) -> bool:
        """True for parameterized types such as ``list[int]`` or ``ValuesView[int]``."""
        return self.kind is Kind.GENERIC or (self.kind is Kind.PROTOCOL and bool(self.args))

    def walk(self) -> Iterator[TypeSpec]:
        yield self
        for a in self.args:
            yield from a.walk()

    def replace_args(self, args: Iterable[TypeSpec]) -> TypeSpec:
        return TypeSpec(self.kind, self.module, self.name, tuple(args), self.typevar_id, self.shape)


def sort_key(t: TypeSpec) -> tuple[str, str, str]:
    return (t.module, t.name, str(t))


def _canonical_members(args: Iterable[TypeSpec]) -> tuple[TypeSpec, ...]:
    seen: dict[TypeSpec, None] = {}
    for a in args:
        if a.kind is Kind.UNION:
            for m in a.args:
                seen[m] = None
        else:
            seen[a] = None
    return tuple(sorted(seen, key=sort_key))


ANY = TypeSpec(Kind.ANY)
NEVER = TypeSpec(Kind.NEVER)
NONE = TypeSpec(Kind.NONE)
ELLIPSIS = TypeSpec(Kind.CONCRETE, "", "...")


def concrete(module: str, name: str) -> TypeSpec:
    return TypeSpec(Kind.CONCRETE, "" if module == "builtins" else module, name)


def generic(module: str, name: str, *args: TypeSpec) -> TypeSpec:
    return TypeSpec(Kind.GENERIC, "" if module == "builtins" else module, name, args)


def protocol(module: str, name: str, *args: TypeSpec) -> TypeSpec:
    return TypeSpec(Kind.PROTOCOL, module, name, args)


def typevar(i: int) -> TypeSpec:
    return TypeSpec(Kind.TYPEVAR, typevar_id=i)


def self_type(module: str = "", name: str = "") -> TypeSpec:
    return TypeSpec(Kind.SELF, module, name)


def union_of(types: Iterable[TypeSpec]) -> TypeSpec:
    """Builds a flattened union, collapsing to the sole member when only one remains."""
    members = _canonical_members(types)
    if not members:
        return NEVER
    if len(members) == 1:
        return members[0]
    return TypeSpec(Kind.UNION, args=members)


BUILTIN_NAMES = frozenset({"int", "float", "complex", "bool", "str", "bytes", "bytearray",
                           "list", "dict", "set", "frozenset", "tuple", "type", "object",
                           "memoryview", "range", "slice"})


@dataclass(frozen=True, order=True)
class FunctionKey:
    source_path: str
    qualified_name: str
    first_line: int

    def __post_init__(self) -> None:
        if self.first_line < 1:
            raise ValueError(f"first_line must be positive, got {self.first_line}")

    def __str__(self) -> str:
        return f"{self.source_path}:{self.first_line}:{self.qualified_name}"


@dataclass(frozen=True)
class CallTrace:
    arg_names: tuple[str, ...]
    arg_types: tuple[TypeSpec, ...]
    return_type: TypeSpec
    yield_type: TypeSpec | None = None
    send_type: TypeSpec | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "arg_names", tuple(self.arg_names))
        object.__setattr__(self, "arg_types", tuple(self.arg_types))
        if len(self.arg_names) != len(self.arg_types):
            raise ValueError("arg_names and arg_types differ in length")

    def map_types(self, fn) -> CallTrace:
        return CallTrace(
            self.arg_names,
            tuple(fn(t) for t in self.arg_types),
            fn(self.return_type),
            None if self.yield_type is None else fn(self.yield_type),
            None if self.send_type is None else fn(self.send_type),
        )

    def all_types(self) -> Iterator[TypeSpec]:
        yield from self.arg_types
        yield self.return_type
        if self.yield_type is not None:
            yield self.yield_type
        if self.send_type is not None:
            yield self.send_type


@dataclass(frozen=True)
class ClassInfo:
    """Runtime facts about a class, captured while tracing."""

    module: str
    name: str
    ancestors: tuple[tuple[str, str], ...]
    attrs: frozenset[str]


@dataclass(frozen=True)
class ParentMethod:
    """A same-named method found on a proper ancestor of the defining class.

    ``params`` excludes the receiver; each entry is ``(name, kind, type)`` where
    kind is an ``inspect.Parameter`` kind name and type is None when unannotated.
    """

    owner: tuple[str, str]
    params: tuple[tuple[str, str, TypeSpec | None], ...] = ()
    return_type: TypeSpec | None = None
    annotated: bool = False


@dataclass(frozen=True)
class MethodInfo:
    defining_class: tuple[str, str]
    receiver: str  # "instance", "class" or "none"
    ancestors: tuple[tuple[str, str], ...]
    parents: tuple[ParentMethod, ...] = ()


@dataclass
class TraceStore:
    entries: dict[FunctionKey, dict[CallTrace, int]] = field(default_factory=dict)
    methods: dict[FunctionKey, MethodInfo] = field(default_factory=dict)
    classes: dict[tuple[str, str], ClassInfo] = field(default_factory=dict)
    seed: int | None = None
    main_path: str | None = None

    def add(self, fn: FunctionKey, trace: CallTrace, count: int = 1) -> None:
        if count <= 0:
            raise ValueError("counts must be positive")
        traces = self.entries.setdefault(fn, {})
        traces[trace] = min(MAX_COUNT, traces.get(trace, 0) + count)

    def total(self, fn: FunctionKey) -> int:
        return sum(self.entries.get(fn, {}).values())

    def __len__(self) -> int:
        return sum(len(t) for t in self.entries.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TraceStore):
            return NotImplemented
        return (self.entries == other.entries and self.methods == other.methods
                and self.classes == other.classes and self.seed == other.seed
                and self.main_path == other.main_path)


def merge_stores(a: TraceStore, b: TraceStore) -> TraceStore:
    """Sums counts per (function, trace); side tables are unioned."""
    out = TraceStore()
    for src in (a, b):
        for fn, traces in src.entries.items():
            for trace, n in traces.items():
                out.add(fn, trace, n)
    # side-table conflicts are resolved by serialized form so that merging commutes
    for attr in ("methods", "classes"):
        merged: dict = {}
        for src in (a, b):
            for k, v in getattr(src, attr).items():
                if k not in merged or _encode(v) < _encode(merged[k]):
                    merged[k] = v
        setattr(out, attr, merged)
    seeds = [s for s in (a.seed, b.seed) if s is not None]
    out.seed = min(seeds) if seeds else None
    mains = [m for m in (a.main_path, b.main_path) if m is not None]
    out.main_path = min(mains) if mains else None
    return out


# --- serialization ---------------------------------------------------------

class TraceFormatError(ValueError):
    def __init__(self, message: str, line: int, record: int | None = None):
        where = f"line {line}" if record is None else f"record {record} (line {line})"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.record = record


def typespec_to_json(t: TypeSpec) -> dict[str, Any]:
    return {
        "kind": t.kind.value,
        "module": t.module,
        "name": t.name,
        "args": [typespec_to_json(a) for a in t.args],
        "typevar": t.typevar_id if t.kind is Kind.TYPEVAR else None,
        "shape": list(t.shape) if t.shape is not None else None,
    }


def typespec_from_json(d: Any) -> TypeSpec:
    if not isinstance(d, dict):
        raise ValueError(f"expected a typespec object, got {type(d).__name__}")
    try:
        kind = Kind(d["kind"])
        tv = d["typevar"]
        shape = d["shape"]
        return TypeSpec(
            kind,
            str(d["module"]),
            str(d["name"]),
            tuple(typespec_from_json(a) for a in d["args"]),
            int(tv) if tv is not None else 0,
            tuple(shape) if shape is not None else None,
        )
    except KeyError as e:
        raise ValueError(f"typespec missing field {e}") from None


def _key_json(fn: FunctionKey) -> dict[str, Any]:
    return {"path": fn.source_path, "qualname": fn.qualified_name, "line": fn.first_line}


def _key_from_json(d: Any) -> FunctionKey:
    return FunctionKey(str(d["path"]), str(d["qualname"]), int(d["line"]))


def _opt(t: TypeSpec | None) -> dict[str, Any] | None:
    return None if t is None else typespec_to_json(t)


def _opt_from(d: Any) -> TypeSpec | None:
    return None if d is None else typespec_from_json(d)


def trace_record(fn: FunctionKey, trace: CallTrace, count: int) -> dict[str, Any]:
    return {
        "fn": _key_json(fn),
        "args": [[n, typespec_to_json(t)] for n, t in zip(trace.arg_names, trace.arg_types)],
        "ret": typespec_to_json(trace.return_type),
        "yield": _opt(trace.yield_type),
        "send": _opt(trace.send_type),
        "count": count,
    }


def trace_from_record(d: dict[str, Any]) -> tuple[FunctionKey, CallTrace, int]:
    fn = _key_from_json(d["fn"])
    names = tuple(str(a[0]) for a in d["args"])
    types = tuple(typespec_from_json(a[1]) for a in d["args"])
    trace = CallTrace(names, types, typespec_from_json(d["ret"]),
                      _opt_from(d["yield"]), _opt_from(d["send"]))
    count = d["count"]
    if not isinstance(count, int) or count <= 0:
        raise ValueError(f"invalid count {count!r}")
    return fn, trace, min(count, MAX_COUNT)


def _parent_json(p: ParentMethod) -> dict[str, Any]:
    return {
        "owner": list(p.owner),
        "params": [[n, k, _opt(t)] for n, k, t in p.params],
        "ret": _opt(p.return_type),
        "annotated": p.annotated,
    }


def _parent_from(d: dict[str, Any]) -> ParentMethod:
    return ParentMethod(
        (str(d["owner"][0]), str(d["owner"][1])),
        tuple((str(n), str(k), _opt_from(t)) for n, k, t in d["params"]),
        _opt_from(d["ret"]),
        bool(d["annotated"]),
    )


def _method_json(fn: FunctionKey, m: MethodInfo) -> dict[str, Any]:
    return {"method": {
        "fn": _key_json(fn),
        "class": list(m.defining_class),
        "receiver": m.receiver,
        "mro": [list(c) for c in m.ancestors],
        "parents": [_parent_json(p) for p in m.parents],
    }}


def _method_from(d: dict[str, Any]) -> tuple[FunctionKey, MethodInfo]:
    return _key_from_json(d["fn"]), MethodInfo(
        (str(d["class"][0]), str(d["class"][1])),
        str(d["receiver"]),
        tuple((str(a), str(b)) for a, b in d["mro"]),
        tuple(_parent_from(p) for p in d["parents"]),
    )


def _class_json(c: ClassInfo) -> dict[str, Any]:
    return {"class": {
        "module": c.module,
        "name": c.name,
        "mro": [list(x) for x in c.ancestors],
        "attrs": sorted(c.attrs),
    }}


def _class_from(d: dict[str, Any]) -> ClassInfo:
    return ClassInfo(str(d["module"]), str(d["name"]),
                     tuple((str(a), str(b)) for a, b in d["mro"]),
                     frozenset(str(a) for a in d["attrs"]))


def _encode(obj: Any) -> str:
    if isinstance(obj, MethodInfo):
        obj = _method_json(FunctionKey("", "", 1), obj)
    elif isinstance(obj, ClassInfo):
        obj = _class_json(obj)
    return json.dumps(obj, ensure_ascii=False)


def iter_records(s: TraceStore) -> Iterator[dict[str, Any]]:
    yield {"format": FORMAT_NAME, "version": FORMAT_VERSION, "seed": s.seed, "main": s.main_path}
    for fn in sorted(s.entries):
        lines = [trace_record(fn, t, n) for t, n in s.entries[fn].items()]
        lines.sort(key=lambda r: json.dumps(r, ensure_ascii=False))
        yield from lines
    for fn in sorted(s.methods):
        yield _method_json(fn, s.methods[fn])
    for key in sorted(s.classes):
        yield _class_json(s.classes[key])


def write_store(s: TraceStore, out: TextIO) -> None:
    for rec in iter_records(s):
        out.write(json.dumps(rec, ensure_ascii=False))
        out.write("\n")


def serialize_store(s: TraceStore) -> bytes:
    buf = io.StringIO()
    write_store(s, buf)
    return buf.getvalue().encode("utf-8")


def deserialize_store(data: bytes | str) -> TraceStore:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceFormatError("missing header", 1)

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"malformed header: {e.msg}", 1) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise TraceFormatError("not a trace file header", 1)
    if header.get("version") != FORMAT_VERSION:
        raise TraceFormatError(f"unsupported version {header.get('version')!r}", 1)

    store = TraceStore(seed=header.get("seed"), main_path=header.get("main"))
    for idx, line in enumerate(lines[1:]):
        lineno = idx + 2
        if not line.strip():
            raise TraceFormatError("empty record", lineno, idx)
        try:
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError("record is not an object")
            if "method" in rec:
                fn, m = _method_from(rec["method"])
                store.methods[fn] = m
            elif "class" in rec and "fn" not in rec:
                c = _class_from(rec["class"])
                store.classes[(c.module, c.name)] = c
            else:
                fn, trace, count = trace_from_record(rec)
                store.add(fn, trace, count)
        except json.JSONDecodeError as e:
            raise TraceFormatError(f"truncated or malformed record: {e.msg}", lineno, idx) from None
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise TraceFormatError(f"invalid record: {e}", lineno, idx) from None
    return store


def read_store(path) -> TraceStore:
    with open(path, "rb") as f:
        return deserialize_store(f.read())
