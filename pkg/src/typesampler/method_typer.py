"""Method-specific post-processing: ``Self`` receivers and override-compatible parameters."""

from __future__ import annotations

import ast
import logging
import sys
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

from .generalizer import ClassTable, Signature, is_subtype, simplify_union
from .trace_model import (
    ANY, ELLIPSIS, NEVER, NONE, CallTrace, Kind, MethodInfo, ParentMethod, TypeSpec, concrete,
    generic, protocol, self_type, union_of,
)

logger = logging.getLogger(__name__)

# constructors are exempt from override checks in the common checkers
NO_WIDENING = frozenset({"__init__", "__new__", "__init_subclass__", "__class_getitem__"})


@dataclass(frozen=True)
class ClassContext:
    defining_class: tuple[str, str]
    mro: tuple[tuple[str, str], ...]
    receiver: str = "instance"
    overridden: tuple[ParentMethod, ...] = ()
    method_name: str = ""


def context_for(qualname: str, info: MethodInfo, stubs: StubRepository | None = None) -> ClassContext:
    """Collects the parent declarations of a method, preferring inline annotations over stubs."""
    name = qualname.rsplit(".", 1)[-1]
    parents = []
    for p in info.parents:
        if p.annotated:
            parents.append(p)
            continue
        found = stubs.lookup(p.owner[0] or "builtins", f"{p.owner[1]}.{name}") if stubs is not None else None
        if found is not None:
            parents.append(found)
        else:
            logger.info("no declaration for %s.%s.%s; not widening against it", p.owner[0], p.owner[1], name)
    return ClassContext(info.defining_class, info.ancestors, info.receiver, tuple(parents), name)


# --- Self ----------------------------------------------------------------------------

def _replace_deep(t: TypeSpec, old: TypeSpec, new: TypeSpec) -> TypeSpec:
    if t == old:
        return new
    if t.args:
        return t.replace_args(_replace_deep(a, old, new) for a in t.args)
    return t


def self_traces(traces: Sequence[CallTrace], ctx: ClassContext) -> list[CallTrace]:
    """Rewrites, per trace, every occurrence of the receiver's own class to ``Self``."""
    if ctx.receiver == "none":
        return list(traces)
    me = self_type(*ctx.defining_class)
    out = []
    for tr in traces:
        if not tr.arg_types or tr.arg_types[0].kind is Kind.ANY:
            out.append(tr)
            continue
        r = tr.arg_types[0]
        if ctx.receiver == "class" and r.kind is Kind.GENERIC and r.name == "type" and len(r.args) == 1:
            cls = r.args[0]
            cls_self = generic("", "type", me)
            tr = tr.map_types(lambda t: _replace_deep(_replace_deep(t, r, cls_self), cls, me))
        elif ctx.receiver == "instance":
            tr = tr.map_types(lambda t: _replace_deep(t, r, me))
        out.append(tr)
    return out


def apply_self(sig: Signature, ctx: ClassContext, target: tuple[int, int] = (3, 12)) -> Signature:
    """Types the receiver as ``Self`` (or ``type[Self]``).

    Positions sharing a type variable with the receiver vary with it across
    traces, so they become ``Self`` too.  Targets without ``typing.Self`` get
    the defining class at render time.
    """
    if ctx.receiver == "none" or not sig.params:
        return sig
    me = self_type(*ctx.defining_class)
    want = me if ctx.receiver == "instance" else generic("", "type", me)
    name, old, has_default = sig.params[0]
    params = list(sig.params)
    params[0] = (name, want, has_default)
    sig = replace(sig, params=params, typevars=dict(sig.typevars))
    if old is not None and old.kind is Kind.TYPEVAR:
        sig = _substitute(sig, old, want)
        sig.typevars.pop(old.typevar_id, None)
    sig.refresh_imports()
    return sig


def _substitute(sig: Signature, old: TypeSpec, new: TypeSpec) -> Signature:
    params = [(n, None if t is None else _replace_deep(t, old, new), d) for n, t, d in sig.params]
    f = (lambda t: None if t is None else _replace_deep(t, old, new))
    return replace(sig, params=params, return_type=_replace_deep(sig.return_type, old, new),
                   yield_type=f(sig.yield_type), send_type=f(sig.send_type),
                   generator_return=f(sig.generator_return))


# --- overriding ----------------------------------------------------------------------

def _declared(parent: ParentMethod, name: str, position: int) -> TypeSpec | None:
    for n, _, t in parent.params:
        if n == name:
            return t
    positional = [p for p in parent.params if p[1] in ("POSITIONAL_ONLY", "POSITIONAL_OR_KEYWORD")]
    if 0 <= position < len(positional) and not name.startswith("*"):
        return positional[position][2]
    star = "VAR_POSITIONAL" if name.startswith("*") and not name.startswith("**") else (
        "VAR_KEYWORD" if name.startswith("**") else None)
    if star:
        for _, k, t in parent.params:
            if k == star:
                return t
    return None


def widen_override(sig: Signature, ctx: ClassContext, classes: ClassTable | None = None) -> Signature:
    """Widens each parameter to also admit whatever overridden declarations admit."""
    if not ctx.overridden or ctx.method_name in NO_WIDENING:
        return sig
    classes = classes or {}
    skip = 1 if ctx.receiver != "none" else 0
    params = list(sig.params)
    constraints = dict(sig.typevars)
    for i in range(skip, len(params)):
        name, observed, has_default = params[i]
        declared = [d for p in ctx.overridden if (d := _declared(p, name, i - skip)) is not None]
        if not declared or observed is None:
            continue
        base = observed
        if observed.kind is Kind.TYPEVAR:
            base = union_of(constraints.get(observed.typevar_id, (ANY,)))
        widened = simplify_union([base, *declared], classes)
        if widened != observed:
            params[i] = (name, widened, has_default)
    for p in ctx.overridden:
        if p.return_type is not None and not is_subtype(sig.return_type, p.return_type, classes):
            logger.info("return type of %s is not narrower than %s's; leaving it as observed",
                        ctx.method_name, p.owner[1])
    sig = replace(sig, params=params, typevars=constraints)
    sig = prune_typevars(sig)
    sig.refresh_imports()
    return sig


def prune_typevars(sig: Signature) -> Signature:
    """Replaces type variables left at fewer than two positions with their constraint union."""
    uses: dict[int, int] = {}
    slots = [t for _, t, _ in sig.params if t is not None] + [sig.return_type]
    for t in slots:
        for s in t.walk():
            if s.kind is Kind.TYPEVAR:
                uses[s.typevar_id] = uses.get(s.typevar_id, 0) + 1
    for tid, cons in list(sig.typevars.items()):
        if uses.get(tid, 0) < 2:
            sig = _substitute(sig, TypeSpec(Kind.TYPEVAR, typevar_id=tid), union_of(cons))
            sig.typevars.pop(tid, None)
    return sig


# --- stubs ---------------------------------------------------------------------------

_TYPING = ("typing", "typing_extensions")
_ABC_PROTOCOLS = {
    "Iterable", "Iterator", "Generator", "Mapping", "MutableMapping", "Sequence", "MutableSequence",
    "MutableSet", "Collection", "Container", "Callable", "Awaitable", "Coroutine", "AsyncIterator",
    "AsyncIterable", "AsyncGenerator", "Reversible", "Hashable", "Sized", "KeysView", "ValuesView",
    "ItemsView", "MappingView",
}
_BUILTIN_ALIASES = {"List": "list", "Dict": "dict", "Set": "set", "FrozenSet": "frozenset",
                    "Tuple": "tuple", "Type": "type", "Text": "str", "LiteralString": "str"}
_COLLECTIONS_ALIASES = {"Deque": "deque", "DefaultDict": "defaultdict", "OrderedDict": "OrderedDict",
                        "Counter": "Counter", "ChainMap": "ChainMap"}
_WRAPPERS = {"Annotated", "ClassVar", "Final", "Required", "NotRequired", "ReadOnly", "TypeGuard"}
_FORMS = {"Union", "Optional", "Literal"} | _WRAPPERS


def _form(name: str) -> TypeSpec:
    return TypeSpec(Kind.CONCRETE, "typing", name)


def _typing_name(name: str) -> TypeSpec:
    if name == "Any" or name.startswith("_"):  # private names in typing stubs are type variables
        return ANY
    if name == "Self":
        return self_type()
    if name in ("NoReturn", "Never"):
        return NEVER
    if name in _FORMS:
        return _form(name)
    if name in _BUILTIN_ALIASES:
        return concrete("", _BUILTIN_ALIASES[name])
    if name in _COLLECTIONS_ALIASES:
        return concrete("collections", _COLLECTIONS_ALIASES[name])
    if name == "AbstractSet":
        return protocol("collections.abc", "Set")
    if name in _ABC_PROTOCOLS:
        return protocol("collections.abc", name)
    if name in ("AnyStr", "TypeAlias", "ParamSpec", "TypeVar"):
        return ANY
    return concrete("typing", name)


def _private(module: str) -> bool:
    return any(p.startswith("_") for p in module.split("."))


class StubRepository:
    """Reads declared signatures from ``.pyi`` stub files.

    By default the stub collection bundled with ``typeshed_client`` is used;
    ``search_path`` adds directories searched first.
    """

    def __init__(self, search_path: Sequence[str | Path] = (), version: tuple[int, int] | None = None):
        import typeshed_client
        self._client = typeshed_client
        self.version = version or sys.version_info[:2]
        self._ctx = typeshed_client.get_search_context(
            search_path=[Path(p) for p in search_path] or None, version=self.version,
            platform=sys.platform)
        self._modules: dict[str, dict[str, tuple] | None] = {}
        self._trees: dict[str, ast.Module | None] = {}

    # files

    def _tree(self, module: str) -> ast.Module | None:
        if module in self._trees:
            return self._trees[module]
        tree = None
        try:
            path = self._client.get_stub_file(module, search_context=self._ctx)
            if path is not None:
                tree = ast.parse(Path(path).read_text(encoding="utf-8"), str(path))
                tree._is_package = Path(path).name == "__init__.pyi"  # type: ignore[attr-defined]
        except (SyntaxError, OSError, ValueError) as e:
            logger.warning("skipping stub for %s: %s", module, e)
            tree = None
        self._trees[module] = tree
        return tree

    def _body(self, stmts: list[ast.stmt]) -> list[ast.stmt]:
        """Flattens version/platform conditionals the way a checker for this interpreter would."""
        out = []
        for s in stmts:
            if isinstance(s, ast.If):
                cond = self._condition(s.test)
                if cond is None:
                    out.extend(self._body(s.body))
                else:
                    out.extend(self._body(s.body if cond else s.orelse))
            elif isinstance(s, ast.Try):
                out.extend(self._body(s.body))
            else:
                out.append(s)
        return out

    def _condition(self, test: ast.expr) -> bool | None:
        try:
            if isinstance(test, ast.BoolOp):
                vals = [self._condition(v) for v in test.values]
                if None in vals:
                    return None
                return all(vals) if isinstance(test.op, ast.And) else any(vals)
            if isinstance(test, ast.UnaryOp) and isinstance(test.op, ast.Not):
                v = self._condition(test.operand)
                return None if v is None else not v
            if isinstance(test, ast.Compare) and len(test.ops) == 1:
                left = ast.unparse(test.left)
                right = ast.literal_eval(test.comparators[0])
                if left in ("sys.version_info", "sys.version_info[:2]"):
                    lhs = self.version
                elif left == "sys.version_info[0]":
                    lhs = self.version[0]
                elif left == "sys.platform":
                    lhs = sys.platform
                else:
                    return None
                op = test.ops[0]
                table = {ast.GtE: lambda a, b: a >= b, ast.Gt: lambda a, b: a > b,
                         ast.Lt: lambda a, b: a < b, ast.LtE: lambda a, b: a <= b,
                         ast.Eq: lambda a, b: a == b, ast.NotEq: lambda a, b: a != b}
                if isinstance(right, tuple):
                    lhs = tuple(lhs)[:len(right)]
                return table[type(op)](lhs, right) if type(op) in table else None
        except Exception:
            return None
        return None

    def _symbols(self, module: str) -> dict[str, tuple] | None:
        if module in self._modules:
            return self._modules[module]
        tree = self._tree(module)
        if tree is None:
            self._modules[module] = None
            return None
        syms: dict[str, tuple] = {}
        stars: list[str] = []
        for s in self._body(tree.body):
            if isinstance(s, ast.ClassDef):
                syms[s.name] = ("class", s)
            elif isinstance(s, ast.ImportFrom):
                src = _absolute(module, s.module, s.level, tree)
                for a in s.names:
                    if a.name == "*":
                        stars.append(src)
                    else:
                        syms[a.asname or a.name] = ("import", src, a.name)
            elif isinstance(s, ast.Import):
                for a in s.names:
                    if a.asname:
                        syms[a.asname] = ("module", a.name)
                    else:
                        syms[a.name.split(".")[0]] = ("module", a.name.split(".")[0])
            elif isinstance(s, (ast.Assign, ast.AnnAssign)) and s.value is not None:
                targets = s.targets if isinstance(s, ast.Assign) else [s.target]
                for t in targets:
                    if isinstance(t, ast.Name):
                        syms[t.id] = ("alias", s.value)
        syms["*"] = ("stars", stars)
        self._modules[module] = syms
        return syms

    # name resolution

    def resolve(self, module: str, name: str, depth: int = 0) -> TypeSpec:
        if depth > 8:
            return ANY
        if module in _TYPING:
            return _typing_name(name)
        if module.startswith("_typeshed"):
            return ANY
        if module == "builtins" and name == "None":
            return NONE
        if module == "collections.abc" and name in _ABC_PROTOCOLS | {"Set"}:
            return protocol("collections.abc", name)
        syms = self._symbols(module)
        if syms is None:
            return concrete(module, name) if module == "builtins" else ANY
        sym = syms.get(name)
        if sym is None:
            for star in syms["*"][1]:
                t = self.resolve(star, name, depth + 1)
                if t is not ANY:
                    return self._public(t, module, name)
            return self.resolve("builtins", name, depth + 1) if module != "builtins" else ANY
        if sym[0] == "class":
            return concrete(module, name)
        if sym[0] == "import":
            return self._public(self.resolve(sym[1], sym[2], depth + 1), module, name)
        if sym[0] == "alias":
            value = sym[1]
            if isinstance(value, ast.Call):
                return ANY  # TypeVar, NewType and friends
            return self.convert(value, module, depth + 1)
        return ANY

    @staticmethod
    def _public(t: TypeSpec, module: str, name: str) -> TypeSpec:
        if t.kind is Kind.CONCRETE and t.module and _private(t.module) and not _private(module) and t.name == name:
            return concrete(module, name)
        return t

    def convert(self, node: ast.expr, module: str, depth: int = 0) -> TypeSpec:
        """Converts a stub annotation expression into a TypeSpec (unknown forms become Any)."""
        if depth > 8:
            return ANY
        if isinstance(node, ast.Constant):
            if node.value is None:
                return NONE
            if node.value is Ellipsis:
                return ELLIPSIS
            if isinstance(node.value, str):
                try:
                    return self.convert(ast.parse(node.value, mode="eval").body, module, depth + 1)
                except SyntaxError:
                    return ANY
            return ANY
        if isinstance(node, ast.Name):
            return self.resolve(module, node.id, depth)
        if isinstance(node, ast.Attribute):
            parts = []
            cur: ast.expr = node
            while isinstance(cur, ast.Attribute):
                parts.append(cur.attr)
                cur = cur.value
            if not isinstance(cur, ast.Name):
                return ANY
            syms = self._symbols(module) or {}
            sym = syms.get(cur.id)
            base = sym[1] if sym and sym[0] == "module" else cur.id
            parts.reverse()
            return self.resolve(".".join([base, *parts[:-1]]), parts[-1], depth)
        if isinstance(node, ast.BinOp) and isinstance(node.op, ast.BitOr):
            return union_of([self.convert(node.left, module, depth), self.convert(node.right, module, depth)])
        if isinstance(node, ast.Subscript):
            head = self.convert(node.value, module, depth)
            sl = node.slice
            elts = sl.elts if isinstance(sl, ast.Tuple) else [sl]
            if head.kind is Kind.CONCRETE and head.module == "typing" and head.name in _FORMS:
                if head.name == "Union":
                    return union_of(self.convert(e, module, depth) for e in elts)
                if head.name == "Optional":
                    return union_of([self.convert(elts[0], module, depth), NONE])
                if head.name in _WRAPPERS:
                    return self.convert(elts[0], module, depth)
                return ANY  # Literal
            if head.kind in (Kind.ANY, Kind.NEVER, Kind.NONE, Kind.SELF):
                return head
            if head.kind is Kind.PROTOCOL and head.name == "Callable":
                return head
            args = tuple(self.convert(e, module, depth) for e in elts)
            kind = Kind.PROTOCOL if head.module == "collections.abc" else Kind.GENERIC
            return TypeSpec(kind, head.module, head.name, args)
        return ANY

    # methods

    def _find_class(self, module: str, name: str, depth: int = 0) -> tuple[str, ast.ClassDef] | None:
        """Follows re-exports until the stub that defines class ``name``."""
        if depth > 8:
            return None
        syms = self._symbols(module)
        if syms is None:
            return None
        sym = syms.get(name)
        if sym is not None:
            if sym[0] == "class":
                return module, sym[1]
            if sym[0] == "import":
                return self._find_class(sym[1], sym[2], depth + 1)
            return None
        for star in syms["*"][1]:
            found = self._find_class(star, name, depth + 1)
            if found is not None:
                return found
        return None

    def lookup(self, module: str, qualname: str) -> ParentMethod | None:
        """Declared parameter and return types of ``module.qualname`` (overloads unioned per slot)."""
        *owners, name = qualname.split(".")
        if owners:
            found = self._find_class(module, owners[0])
            if found is None:
                return None
            module, cls = found
            body = self._body(cls.body)
            for owner in owners[1:]:
                cls = next((s for s in body if isinstance(s, ast.ClassDef) and s.name == owner), None)
                if cls is None:
                    return None
                body = self._body(cls.body)
        else:
            tree = self._tree(module)
            if tree is None:
                return None
            body = self._body(tree.body)
        defs = [s for s in body if isinstance(s, (ast.FunctionDef, ast.AsyncFunctionDef)) and s.name == name]
        if not defs:
            return None
        slots: dict[str, list] = {}
        kinds: dict[str, str] = {}
        returns = []
        for d in defs:
            decorators = {ast.unparse(x).rsplit(".", 1)[-1] for x in d.decorator_list}
            if "property" in decorators or any(x.endswith(("setter", "deleter")) for x in decorators):
                return None
            params = _stub_params(d.args)
            if owners and "staticmethod" not in decorators and params:
                params = params[1:]
            for pname, kind, ann in params:
                kinds.setdefault(pname, kind)
                slot = slots.setdefault(pname, [])
                slot.append(ANY if ann is None else self.convert(ann, module))
            returns.append(ANY if d.returns is None else self.convert(d.returns, module))
        params_out = tuple((n, kinds[n], union_of(ts)) for n, ts in slots.items())
        owner = ("" if module == "builtins" else module, ".".join(owners))
        return ParentMethod(owner, params_out, union_of(returns), True)


def _stub_params(args: ast.arguments) -> list[tuple[str, str, ast.expr | None]]:
    out = [(a.arg, "POSITIONAL_ONLY", a.annotation) for a in args.posonlyargs]
    # old-style positional-only names (leading double underscore) count as positional-only
    out += [(a.arg, "POSITIONAL_ONLY" if a.arg.startswith("__") and not a.arg.endswith("__")
             else "POSITIONAL_OR_KEYWORD", a.annotation) for a in args.args]
    if args.vararg is not None:
        out.append((args.vararg.arg, "VAR_POSITIONAL", args.vararg.annotation))
    out += [(a.arg, "KEYWORD_ONLY", a.annotation) for a in args.kwonlyargs]
    if args.kwarg is not None:
        out.append((args.kwarg.arg, "VAR_KEYWORD", args.kwarg.annotation))
    return out


def _absolute(module: str, target: str | None, level: int, tree: ast.Module) -> str:
    if not level:
        return target or ""
    parts = module.split(".")
    # a package's own stub is its __init__, so one level refers to the package itself
    is_pkg = getattr(tree, "_is_package", False)
    base = parts if is_pkg else parts[:-1]
    base = base[:len(base) - (level - 1)] if level > 1 else base
    return ".".join([*base, target] if target else base)
