"""Renders signatures as source annotations and edits files in place.

Edits go through a concrete syntax tree, so everything that is not an inserted
annotation, import or type-variable declaration keeps its exact bytes.
"""

from __future__ import annotations

import difflib
import logging
import os
import shutil
import tempfile
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import libcst as cst
from libcst.metadata import MetadataWrapper, PositionProvider

from .generalizer import Signature
from .trace_model import ANY, NONE, Kind, TypeSpec, protocol, union_of

logger = logging.getLogger(__name__)

Version = tuple[int, int]

_ABC_NAMES = {"Iterable", "Iterator", "Generator", "Mapping", "MutableMapping", "Sequence", "MutableSequence",
              "Set", "MutableSet", "Collection", "Container", "Callable", "Awaitable", "Coroutine",
              "AsyncIterator", "AsyncIterable", "AsyncGenerator", "Reversible", "Hashable", "Sized",
              "KeysView", "ValuesView", "ItemsView", "MappingView"}


class StaleKeysError(Exception):
    """The file no longer matches the traced definitions."""

    def __init__(self, path: str, keys: Iterable[tuple[str, int]]):
        self.keys = sorted(keys)
        listing = ", ".join(f"{q} (line {n})" for q, n in self.keys)
        super().__init__(f"{path}: definitions changed since tracing: {listing}")


def parse_version(text: str | Version) -> Version:
    if isinstance(text, tuple):
        return text
    major, minor = text.split(".")[:2]
    v = (int(major), int(minor))
    if not (3, 9) <= v <= (3, 13):
        raise ValueError(f"target version must be between 3.9 and 3.13, got {text}")
    return v


def _equivalent(a: tuple[str, str], b: tuple[str, str]) -> bool:
    if a == b:
        return True
    mods = {a[0], b[0]}
    if a[1] != b[1]:
        return False
    return mods <= {"typing", "typing_extensions"} or (mods == {"typing", "collections.abc"} and a[1] in _ABC_NAMES)


@dataclass
class Renderer:
    """Turns TypeSpecs into annotation text for one module, collecting the imports it needs.

    ``bound`` maps names already bound at module level to their import origin
    (None for local definitions); ``local_modules`` are module names under
    which this file's own definitions were recorded.
    """

    target: Version = (3, 12)
    local_modules: frozenset[str] = frozenset()
    bound: Mapping[str, tuple[str, str] | None] = field(default_factory=dict)
    local_defs: Mapping[str, int] = field(default_factory=dict)
    typevar_names: Mapping[int, str] = field(default_factory=dict)
    imports: set[tuple[str, str]] = field(default_factory=set)
    module_imports: set[str] = field(default_factory=set)
    before_line: int | None = None
    forward: bool = False

    def name(self, module: str, name: str) -> str:
        if not module:
            return name
        head = name.split(".")[0]
        if module in self.local_modules:
            end = self.local_defs.get(head)
            if self.before_line is not None and (end is None or end >= self.before_line):
                self.forward = True
            return name
        if module == "__main__":
            return self.name("typing", "Any")
        if head in self.bound:
            origin = self.bound[head]
            if origin is not None and _equivalent(origin, (module, head)):
                return name
            self.module_imports.add(module)
            return f"{module}.{name}"
        clash = next((m for m, n in self.imports if n == head and not _equivalent((m, n), (module, head))), None)
        if clash is not None:
            self.module_imports.add(module)
            return f"{module}.{name}"
        self.imports.add((module, head))
        return name

    def render(self, t: TypeSpec, top: bool = True) -> str:
        k = t.kind
        v = self.target
        if k is Kind.ANY:
            return self.name("typing", "Any")
        if k is Kind.NONE:
            return "None"
        if k is Kind.NEVER:
            if v >= (3, 11):
                return self.name("typing", "Never")
            logger.debug("Never is unavailable before 3.11; using NoReturn")
            return self.name("typing", "NoReturn")
        if k is Kind.SELF:
            if v >= (3, 11) or not t.name:
                return self.name("typing", "Self")
            return self.name(t.module, t.name)
        if k is Kind.TYPEVAR:
            return self.typevar_names.get(t.typevar_id, f"T{t.typevar_id}" if v >= (3, 12) else f"rt_T{t.typevar_id}")
        if k is Kind.UNION:
            members = [m for m in t.args if m.kind is not Kind.NONE]
            has_none = len(members) < len(t.args)
            if v >= (3, 10):
                parts = [self.render(m, False) for m in members] + (["None"] if has_none else [])
                return "|".join(parts)
            inner = [self.render(m, False) for m in members]
            if has_none and len(inner) == 1:
                return f"{self.name('typing', 'Optional')}[{inner[0]}]"
            return f"{self.name('typing', 'Union')}[{', '.join(inner + (['None'] if has_none else []))}]"
        if k is Kind.SHAPED:
            dims = " ".join(str(d) for d in t.shape or ())
            return f'{self.name(t.module, t.name)}[{self.render(t.args[0], False)}, "{dims}"]'
        if t == _ELLIPSIS_SPEC:
            return "..."
        head = self.name(t.module, t.name)
        if not t.args:
            return "tuple[()]" if k is Kind.GENERIC and t.name == "tuple" and not t.module else head
        if v < (3, 11) and any(a.kind is Kind.NEVER for a in t.args):
            return head  # element type unknown without Never: bare container
        return f"{head}[{', '.join(self.render(a, False) for a in t.args)}]"


_ELLIPSIS_SPEC = TypeSpec(Kind.CONCRETE, "", "...")


def render_type(t: TypeSpec, target: Version | str = (3, 12)) -> str:
    """Source text for ``t`` on the given target version (imports are not tracked)."""
    return Renderer(parse_version(target)).render(t)


def render_signature(sig: Signature, target: Version | str = (3, 12)) -> str:
    """One-line rendering such as ``[T1: (int, str)](a: T1, b: T1) -> T1``, for reports and tests."""
    r = Renderer(parse_version(target))
    head = ""
    if sig.typevars:
        tvs = [f"T{i}: ({', '.join(r.render(c) for c in sig.typevars[i])})" for i in sorted(sig.typevars)]
        head = f"[{', '.join(tvs)}]"
    params = ", ".join(n if t is None else f"{n}: {r.render(t)}" for n, t, _ in sig.params)
    return f"{head}({params}) -> {r.render(sig.return_type)}"


# --- module analysis -----------------------------------------------------------

def _dotted(node: cst.BaseExpression) -> str:
    if isinstance(node, cst.Name):
        return node.value
    if isinstance(node, cst.Attribute):
        return f"{_dotted(node.value)}.{node.attr.value}"
    return ""


def _bound_names(module: cst.Module) -> tuple[dict[str, tuple[str, str] | None], dict[str, str]]:
    """Module-level names and their import origins; also existing ``X = TypeVar("X", ...)`` declarations."""
    bound: dict[str, tuple[str, str] | None] = {}
    typevars: dict[str, str] = {}

    def visit_simple(stmt: cst.SimpleStatementLine) -> None:
        for small in stmt.body:
            if isinstance(small, cst.ImportFrom) and not isinstance(small.names, cst.ImportStar):
                mod = _dotted(small.module) if small.module is not None else ""
                if small.relative:
                    mod = "." * len(small.relative) + mod
                for alias in small.names:
                    name = _dotted(alias.name)
                    local = alias.asname.name.value if alias.asname is not None else name
                    bound[local] = (mod, name)
            elif isinstance(small, cst.Import):
                for alias in small.names:
                    full = _dotted(alias.name)
                    if alias.asname is not None:
                        bound[alias.asname.name.value] = ("<module>", full)
                    else:
                        bound[full.split(".")[0]] = ("<module>", full.split(".")[0])
            elif isinstance(small, (cst.Assign, cst.AnnAssign)):
                targets = [t.target for t in small.targets] if isinstance(small, cst.Assign) else [small.target]
                for t in targets:
                    if isinstance(t, cst.Name):
                        bound[t.value] = None
                        val = small.value
                        if (isinstance(val, cst.Call) and _dotted(val.func).endswith("TypeVar")
                                and len(val.args) > 1):
                            key = ", ".join(module.code_for_node(a.value) for a in val.args[1:])
                            typevars.setdefault(key, t.value)

    def visit_block(body) -> None:
        for stmt in body:
            if isinstance(stmt, cst.SimpleStatementLine):
                visit_simple(stmt)
            elif isinstance(stmt, (cst.FunctionDef, cst.ClassDef)):
                bound[stmt.name.value] = None
            elif isinstance(stmt, (cst.If, cst.Try, cst.With)):
                visit_block(stmt.body.body)
                for part in ([stmt.orelse] if isinstance(stmt, cst.If) else []):
                    while part is not None:
                        visit_block(part.body.body)
                        part = getattr(part, "orelse", None)
                if isinstance(stmt, cst.Try):
                    for h in stmt.handlers:
                        visit_block(h.body.body)

    visit_block(module.body)
    return bound, typevars


def _header_end(module: cst.Module) -> int:
    """Index after the leading block of docstring and import statements."""
    end = 0
    for i, stmt in enumerate(module.body):
        if not isinstance(stmt, cst.SimpleStatementLine):
            break
        small = stmt.body[0] if stmt.body else None
        if isinstance(small, (cst.Import, cst.ImportFrom)):
            end = i + 1
        elif i == 0 and isinstance(small, cst.Expr) and isinstance(small.value, (cst.SimpleString, cst.ConcatenatedString)):
            end = 1
        else:
            break
    return end


def _has_future_annotations(module: cst.Module) -> bool:
    for stmt in module.body[:_header_end(module)]:
        for small in getattr(stmt, "body", ()):
            if (isinstance(small, cst.ImportFrom) and small.module is not None
                    and _dotted(small.module) == "__future__" and not isinstance(small.names, cst.ImportStar)
                    and any(_dotted(a.name) == "annotations" for a in small.names)):
                return True
    return False


def module_name_for(path: str) -> str:
    """Dotted module name of a source file, walking up through package directories."""
    path = os.path.abspath(path)
    parts = [os.path.splitext(os.path.basename(path))[0]]
    d = os.path.dirname(path)
    while os.path.exists(os.path.join(d, "__init__.py")):
        parts.append(os.path.basename(d))
        d = os.path.dirname(d)
    if parts[0] == "__init__":
        parts = parts[1:]
    return ".".join(reversed(parts))


# --- edits -----------------------------------------------------------------------

def _quote(text: str) -> str:
    q = "'" if '"' in text else '"'
    return f"{q}{text}{q}"


def _async_return(sig: Signature) -> TypeSpec:
    y = sig.yield_type
    s = sig.send_type
    if s is None or s.kind in (Kind.NONE, Kind.NEVER):
        return protocol("collections.abc", "AsyncIterator", y)
    return protocol("collections.abc", "AsyncGenerator", y, s)


def _substitute(t: TypeSpec, tid: int, new: TypeSpec) -> TypeSpec:
    if t.kind is Kind.TYPEVAR and t.typevar_id == tid:
        return new
    return t.replace_args(_substitute(a, tid, new) for a in t.args) if t.args else t


class _Editor(cst.CSTTransformer):
    METADATA_DEPENDENCIES = (PositionProvider,)

    def __init__(self, module: cst.Module, sigs: Mapping[tuple[str, int], Signature], target: Version,
                 overwrite: bool, local_modules: frozenset[str]):
        super().__init__()
        self.module = module
        self.sigs = sigs
        self.target = target
        self.overwrite = overwrite
        self.local_modules = local_modules
        self.bound, self.existing_typevars = _bound_names(module)
        self.future = _has_future_annotations(module)
        self.scope: list[str] = []
        self.matched: set[tuple[str, int]] = set()
        self.imports: set[tuple[str, str]] = set()
        self.module_imports: set[str] = set()
        self.local_defs: dict[str, int] = {}
        self.tops: list[tuple[int, int]] = []
        self.decls: dict[int, list[tuple[str, str]]] = {}
        self.module_typevars: dict[str, str] = dict(self.existing_typevars)

    def _start_line(self, node) -> int:
        decorators = getattr(node, "decorators", ())
        first = decorators[0] if decorators else node
        return self.get_metadata(PositionProvider, first).start.line

    def visit_Module(self, node: cst.Module) -> None:
        for stmt in node.body:
            start = self._start_line(stmt)
            end = self.get_metadata(PositionProvider, stmt).end.line
            self.tops.append((start, end))
            if isinstance(stmt, cst.ClassDef):
                self.local_defs[stmt.name.value] = end
            elif isinstance(stmt, cst.FunctionDef):
                self.local_defs.setdefault(stmt.name.value, end)

    def visit_ClassDef(self, node: cst.ClassDef) -> None:
        self.scope.append(node.name.value)

    def leave_ClassDef(self, original, updated):
        self.scope.pop()
        return updated

    def visit_FunctionDef(self, node: cst.FunctionDef) -> None:
        self.scope.extend([node.name.value, "<locals>"])

    def leave_FunctionDef(self, original: cst.FunctionDef, updated: cst.FunctionDef):
        del self.scope[-2:]
        qualname = ".".join(self.scope + [original.name.value])
        key = (qualname, self._start_line(original))
        sig = self.sigs.get(key)
        if sig is None:
            return updated
        self.matched.add(key)
        return self._annotate(original, updated, sig)

    def _top_index(self, line: int) -> int:
        for i, (start, end) in enumerate(self.tops):
            if start <= line <= end:
                return i
        return 0

    def _annotate(self, original: cst.FunctionDef, node: cst.FunctionDef, sig: Signature) -> cst.FunctionDef:
        def_line = self._start_line(original)
        by_name = {n: t for n, t, _ in sig.params}
        # which positions get written
        writes: dict[str, TypeSpec] = {}
        all_params = [(p, p.name.value) for p in (*node.params.posonly_params, *node.params.params)]
        if isinstance(node.params.star_arg, cst.Param):
            all_params.append((node.params.star_arg, "*" + node.params.star_arg.name.value))
        all_params += [(p, p.name.value) for p in node.params.kwonly_params]
        if node.params.star_kwarg is not None:
            all_params.append((node.params.star_kwarg, "**" + node.params.star_kwarg.name.value))
        for p, name in all_params:
            t = by_name.get(name)
            if t is not None and (p.annotation is None or self.overwrite):
                writes[name] = t
        ret = _async_return(sig) if original.asynchronous is not None and sig.yield_type is not None else sig.return_type
        if node.returns is None or self.overwrite:
            writes["<return>"] = ret

        # a type variable needs at least two written positions and a place to declare it
        uses: dict[int, int] = {}
        for t in writes.values():
            for s in t.walk():
                if s.kind is Kind.TYPEVAR:
                    uses[s.typevar_id] = uses.get(s.typevar_id, 0) + 1
        can_declare = self.target < (3, 12) or node.type_parameters is None or self.overwrite
        for tid, cons in sig.typevars.items():
            if uses.get(tid, 0) and (uses[tid] < 2 or not can_declare):
                writes = {k: _substitute(t, tid, union_of(cons)) for k, t in writes.items()}
                uses.pop(tid)
        used_tvs = sorted(uses)

        names: dict[int, str] = {}
        renderer = Renderer(self.target, self.local_modules, self.bound, self.local_defs, names,
                            self.imports, self.module_imports, None if self.future else def_line)
        if used_tvs and self.target < (3, 12):
            for tid in used_tvs:
                cons_text = ", ".join(renderer.render(c) for c in sig.typevars[tid])
                name = self.module_typevars.get(cons_text)
                if name is None:
                    taken = set(self.bound) | set(self.module_typevars.values())
                    n = 1
                    while f"rt_T{n}" in taken:
                        n += 1
                    name = f"rt_T{n}"
                    self.module_typevars[cons_text] = name
                    self.decls.setdefault(self._top_index(def_line), []).append((name, cons_text))
                    renderer.name("typing", "TypeVar")
                names[tid] = name

        def annotation(t: TypeSpec) -> cst.Annotation:
            renderer.forward = False
            text = renderer.render(t)
            if renderer.forward:
                text = _quote(text)
            return cst.Annotation(cst.parse_expression(text))

        def edit_param(p: cst.Param, name: str) -> cst.Param:
            if name not in writes:
                return p
            changes: dict = {"annotation": annotation(writes[name])}
            if p.default is not None and p.equal is cst.MaybeSentinel.DEFAULT:
                changes["equal"] = cst.AssignEqual(cst.SimpleWhitespace(""), cst.SimpleWhitespace(""))
            return p.with_changes(**changes)

        params = node.params
        new_params = params.with_changes(
            posonly_params=[edit_param(p, p.name.value) for p in params.posonly_params],
            params=[edit_param(p, p.name.value) for p in params.params],
            kwonly_params=[edit_param(p, p.name.value) for p in params.kwonly_params],
        )
        if isinstance(params.star_arg, cst.Param):
            new_params = new_params.with_changes(star_arg=edit_param(params.star_arg, "*" + params.star_arg.name.value))
        if params.star_kwarg is not None:
            new_params = new_params.with_changes(
                star_kwarg=edit_param(params.star_kwarg, "**" + params.star_kwarg.name.value))
        node = node.with_changes(params=new_params)
        if "<return>" in writes:
            node = node.with_changes(returns=annotation(writes["<return>"]))
        if used_tvs and self.target >= (3, 12):
            tps = []
            for tid in used_tvs:
                cons = ", ".join(renderer.render(c) for c in sig.typevars[tid])
                tps.append(cst.TypeParam(cst.TypeVar(cst.Name(f"T{tid}"), bound=cst.parse_expression(f"({cons})"))))
            node = node.with_changes(type_parameters=cst.TypeParameters(params=tps))
        return node

    def leave_Module(self, original: cst.Module, updated: cst.Module) -> cst.Module:
        body = list(updated.body)
        for idx in sorted(self.decls, reverse=True):
            stmt = body[idx]
            lines = [cst.parse_statement(f'{name} = {self._typevar_call()}("{name}", {cons})\n')
                     for name, cons in self.decls[idx]]
            lines[0] = lines[0].with_changes(leading_lines=stmt.leading_lines)
            body[idx] = stmt.with_changes(leading_lines=())
            body[idx:idx] = lines
        imports = self._import_lines()
        if imports:
            at = _header_end(original)
            body[at:at] = imports
        return updated.with_changes(body=body)

    def _typevar_call(self) -> str:
        origin = self.bound.get("TypeVar")
        if origin is not None and not _equivalent(origin, ("typing", "TypeVar")):
            return "typing.TypeVar"
        return "TypeVar"

    def _import_lines(self) -> list[cst.SimpleStatementLine]:
        by_module: dict[str, set[str]] = {}
        for module, name in self.imports:
            if name in self.bound and _equivalent(self.bound[name] or ("", ""), (module, name)):
                continue
            if module == "typing" and name == "TypeVar" and self._typevar_call() != "TypeVar":
                self.module_imports.add("typing")
                continue
            by_module.setdefault(module, set()).add(name)
        lines = [cst.parse_statement(f"import {m}\n") for m in sorted(self.module_imports)
                 if not (m in self.bound and self.bound[m] == ("<module>", m))]
        for module in sorted(by_module):
            lines.append(cst.parse_statement(f"from {module} import {', '.join(sorted(by_module[module]))}\n"))
        return lines


def apply_edits(source: str, signatures: Iterable[Signature], *, target: Version | str = (3, 12),
                overwrite: bool = False, module_name: str | None = None, path: str = "<source>",
                is_main: bool = False) -> str:
    """Inserts annotations for ``signatures`` into ``source`` and returns the new text.

    Raises StaleKeysError when a signature's (qualified name, first line) no
    longer matches a definition.
    """
    sigs = {}
    for sig in signatures:
        if sig.fn is not None:
            sigs[(sig.fn.qualified_name, sig.fn.first_line)] = sig
    if not sigs:
        return source
    target = parse_version(target)
    module = cst.parse_module(source)
    local = {m for m in (module_name,) if m}
    if is_main:
        local.add("__main__")
    wrapper = MetadataWrapper(module)
    editor = _Editor(wrapper.module, sigs, target, overwrite, frozenset(local))
    new = wrapper.visit(editor)
    stale = set(sigs) - editor.matched
    if stale:
        raise StaleKeysError(path, stale)
    return new.code


def unified_diff(old: str, new: str, path: str) -> str:
    return "".join(difflib.unified_diff(old.splitlines(keepends=True), new.splitlines(keepends=True),
                                        fromfile=f"a/{path}", tofile=f"b/{path}"))


def write_atomic(path: str, text: str, backup: bool = True) -> None:
    """Replaces ``path`` via a temporary file in the same directory; keeps ``path.bak`` if asked."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".typesampler-", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        shutil.copymode(path, tmp)
        if backup:
            shutil.copy2(path, path + ".bak")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
