"""Source-level instrumentation used when loading traced modules.

Two transforms are applied to function definitions:

* event probes, for interpreters without a runtime monitoring API: each
  function checks a per-location flag on entry and reports returns, yields
  and exceptional exits while a sampled call is pending;
* send capture: every ``(yield ...)`` whose value the program uses is wrapped
  so that values received through ``send()`` reach the pending call.

The helper names are installed in ``builtins`` so that module namespaces stay
unchanged.
"""

from __future__ import annotations

import ast
import builtins
import fnmatch
import importlib.abc
import importlib.machinery
import logging
import os
import sys
import weakref
from collections.abc import Callable, Sequence
from dataclasses import dataclass

logger = logging.getLogger(__name__)

ON = "__tsp_on__"          # list[bool]: start probe enabled per location
PENDING = "__tsp_p__"      # list[bool]: a sampled call of the location is pending
START = "__tsp_start__"
RETURN = "__tsp_R__"
YIELD = "__tsp_Y__"
SEND = "__tsp_S__"
UNWIND = "__tsp_U__"


@dataclass(frozen=True)
class FunctionSite:
    """Static facts about one function definition, known before it runs."""

    path: str
    qualname: str
    first_line: int
    params: tuple[str, ...]
    is_generator: bool
    is_async: bool


Register = Callable[[FunctionSite], int]


def _own_nodes(fn: ast.AST):
    """Nodes of a function body, not descending into nested scopes."""
    stack = list(ast.iter_child_nodes(fn))
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.Lambda, ast.ClassDef)):
            continue
        stack.extend(ast.iter_child_nodes(node))


def param_names(args: ast.arguments) -> tuple[str, ...]:
    names = [a.arg for a in args.posonlyargs + args.args]
    if args.vararg is not None:
        names.append("*" + args.vararg.arg)
    names.extend(a.arg for a in args.kwonlyargs)
    if args.kwarg is not None:
        names.append("**" + args.kwarg.arg)
    return tuple(names)


def _name(id_: str) -> ast.Name:
    return ast.Name(id=id_, ctx=ast.Load())


def _flag(flags: str, idx: int) -> ast.Subscript:
    return ast.Subscript(value=_name(flags), slice=ast.Constant(idx), ctx=ast.Load())


def _call(fn: str, *args: ast.expr) -> ast.Call:
    return ast.Call(func=_name(fn), args=list(args), keywords=[])


def _guarded(flags: str, idx: int, stmt_fn: str, *args: ast.expr) -> ast.If:
    return ast.If(test=_flag(flags, idx), body=[ast.Expr(_call(stmt_fn, ast.Constant(idx), *args))], orelse=[])


class _Transformer(ast.NodeTransformer):
    def __init__(self, path: str, register: Register | None, sends: bool):
        self.path = path
        self.register = register
        self.sends = sends
        self.scope: list[str] = []
        self.current: list[int | None] = []
        self.gen_sites: list[int | None] = []

    # scopes

    def visit_ClassDef(self, node: ast.ClassDef):
        self.scope.append(node.name)
        self.current.append(None)
        self.generic_visit(node)
        self.current.pop()
        self.scope.pop()
        return node

    def visit_Lambda(self, node: ast.Lambda):
        self.current.append(None)
        self.generic_visit(node)
        self.current.pop()
        return node

    def _function(self, node):
        qualname = ".".join(self.scope + [node.name])
        first_line = node.decorator_list[0].lineno if node.decorator_list else node.lineno
        is_gen = any(isinstance(n, (ast.Yield, ast.YieldFrom)) for n in _own_nodes(node))
        idx = None
        if self.register is not None:
            idx = self.register(FunctionSite(self.path, qualname, first_line, param_names(node.args),
                                             is_gen, isinstance(node, ast.AsyncFunctionDef)))
        self.scope.extend([node.name, "<locals>"])
        self.current.append(idx)
        self.generic_visit(node)
        self.current.pop()
        del self.scope[-2:]
        if idx is not None:
            self._wrap_body(node, idx)
        return node

    visit_FunctionDef = _function
    visit_AsyncFunctionDef = _function

    def _wrap_body(self, node, idx: int) -> None:
        body = node.body
        doc = body[:1] if (body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant)
                           and isinstance(body[0].value.value, str)) else []
        rest = body[len(doc):]
        anchor = rest[0] if rest else body[0]
        entry = ast.If(test=_flag(ON, idx), body=[ast.Expr(_call(START, ast.Constant(idx)))], orelse=[])
        implicit = _guarded(PENDING, idx, RETURN, ast.Constant(None))
        # the helpers may already be gone when a generator is closed during interpreter shutdown
        safe_unwind = ast.Try(body=[_guarded(PENDING, idx, UNWIND)],
                              handlers=[ast.ExceptHandler(type=_name("Exception"), name=None, body=[ast.Pass()])],
                              orelse=[], finalbody=[])
        handler = ast.ExceptHandler(
            type=_name("BaseException"), name=None,
            body=[safe_unwind, ast.Raise(exc=None, cause=None)])
        wrapped = ast.Try(body=rest + [implicit], handlers=[handler], orelse=[], finalbody=[])
        for n in (entry, implicit, safe_unwind, handler, wrapped):
            ast.copy_location(n, anchor)
        node.body = doc + [entry, wrapped]

    # events

    def visit_Return(self, node: ast.Return):
        self.generic_visit(node)
        idx = self.current[-1] if self.current else None
        if idx is None:
            return node
        if node.value is None:
            probe = ast.copy_location(_guarded(PENDING, idx, RETURN, ast.Constant(None)), node)
            return [probe, node]
        value = node.value
        node.value = ast.copy_location(
            ast.IfExp(test=_flag(PENDING, idx), body=_call(RETURN, ast.Constant(idx), value), orelse=value), value)
        return node

    def _yield_value(self, node: ast.Yield) -> ast.Yield:
        idx = self.current[-1] if self.current else None
        if idx is None or self.register is None:
            return node
        value = node.value if node.value is not None else ast.copy_location(ast.Constant(None), node)
        node.value = ast.copy_location(
            ast.IfExp(test=_flag(PENDING, idx), body=_call(YIELD, ast.Constant(idx), value), orelse=value), node)
        return node

    def visit_Expr(self, node: ast.Expr):
        if isinstance(node.value, ast.Yield):
            # received value is discarded: no send capture needed
            self.generic_visit(node.value)
            self._yield_value(node.value)
            return node
        self.generic_visit(node)
        return node

    def visit_Yield(self, node: ast.Yield):
        self.generic_visit(node)
        self._yield_value(node)
        idx = self.current[-1] if self.current else None
        if not self.sends or idx is None:
            return node
        return ast.copy_location(_call(SEND, ast.Constant(idx), node), node)


def transform(tree: ast.Module, path: str, register: Register | None, sends: bool = True) -> ast.Module:
    """Instruments a parsed module in place."""
    t = _Transformer(path, register, sends)
    t.visit(tree)
    ast.fix_missing_locations(tree)
    return tree


def instrument_sends(source: str, path: str = "<string>", register: Register | None = None) -> str:
    """Returns ``source`` with every value-receiving ``yield`` wrapped for send capture.

    Unparseable input is returned unchanged with a warning.
    """
    try:
        tree = ast.parse(source, path)
    except SyntaxError as e:
        logger.warning("cannot instrument %s: %s", path, e)
        return source
    reg = register if register is not None else _counting_register()
    t = _SendOnly(path, reg)
    t.visit(tree)
    ast.fix_missing_locations(tree)
    return ast.unparse(tree)


class _SendOnly(_Transformer):
    """Adds send capture without event probes (the monitoring backend observes events itself)."""

    def __init__(self, path: str, register: Register):
        super().__init__(path, register, True)

    def _wrap_body(self, node, idx: int) -> None:
        pass

    def visit_Return(self, node: ast.Return):
        self.generic_visit(node)
        return node

    def _yield_value(self, node: ast.Yield) -> ast.Yield:
        return node


def _counting_register() -> Register:
    sites: list[FunctionSite] = []

    def reg(site: FunctionSite) -> int:
        sites.append(site)
        return len(sites) - 1
    return reg


def compile_source(source: bytes | str, path: str, register: Register, probes: bool = True):
    """Parses, instruments and compiles; falls back to the plain source on failure."""
    try:
        tree = ast.parse(source, path)
    except SyntaxError as e:
        logger.warning("cannot instrument %s: %s", path, e)
        return compile(source, path, "exec", dont_inherit=True)
    try:
        if probes:
            transform(tree, path, register, sends=True)
        else:
            _SendOnly(path, register).visit(tree)
            ast.fix_missing_locations(tree)
        return compile(tree, path, "exec", dont_inherit=True)
    except Exception as e:  # never block the target on our own transform
        logger.warning("instrumentation of %s failed (%s); loading it unmodified", path, e)
        return compile(source, path, "exec", dont_inherit=True)


# --- loading ---------------------------------------------------------------------

class PathFilter:
    """Decides which source files are instrumented."""

    def __init__(self, include: Sequence[str] = (), exclude: Sequence[str] = (), root: str | None = None,
                 exclude_stdlib: bool = True):
        self.root = os.path.realpath(root or os.getcwd())
        self.include = [os.path.abspath(p) if not any(c in p for c in "*?[") and os.path.exists(p) else p
                        for p in include]
        self.exclude = list(exclude)
        here = os.path.dirname(os.path.realpath(__file__))
        self.never = [here + os.sep] + (_library_dirs() if exclude_stdlib else [])
        self._cache: dict[str, bool] = {}

    def __call__(self, path: str | None) -> bool:
        if not path:
            return False
        hit = self._cache.get(path)
        if hit is None:
            hit = self._cache[path] = self._decide(path)
        return hit

    def _decide(self, path: str) -> bool:
        if not path.endswith(".py") or path.startswith("<"):
            return False
        real = os.path.realpath(path)
        if any(real.startswith(p) for p in self.never):
            return False
        if any(_match(real, pat) for pat in self.exclude):
            return False
        if self.include:
            return any(_match(real, pat) for pat in self.include)
        return real.startswith(self.root + os.sep)


def _match(path: str, pattern: str) -> bool:
    if pattern.endswith(os.sep) or os.path.isdir(pattern):
        return path.startswith(os.path.realpath(pattern).rstrip(os.sep) + os.sep)
    if os.path.isabs(pattern) and not any(c in pattern for c in "*?["):
        return path == os.path.realpath(pattern)
    return fnmatch.fnmatch(path, pattern) or fnmatch.fnmatch(path, "*/" + pattern.lstrip("/"))


def _library_dirs() -> list[str]:
    import sysconfig
    dirs = set()
    for key in ("stdlib", "platstdlib", "purelib", "platlib"):
        try:
            dirs.add(os.path.realpath(sysconfig.get_path(key)) + os.sep)
        except Exception:
            pass
    for p in sys.path:
        if p.endswith(("site-packages", "dist-packages")):
            dirs.add(os.path.realpath(p) + os.sep)
    return sorted(dirs)


instrumented_modules: weakref.WeakSet = weakref.WeakSet()


class InstrumentingLoader(importlib.machinery.SourceFileLoader):
    """Compiles included modules through the transform, bypassing bytecode caches."""

    register: Register = staticmethod(lambda site: 0)
    probes: bool = True

    def exec_module(self, module):
        instrumented_modules.add(module)
        super().exec_module(module)

    def get_code(self, fullname):
        path = self.get_filename(fullname)
        data = self.get_data(path)
        return compile_source(data, path, type(self).register, type(self).probes)


class InstrumentingFinder(importlib.abc.MetaPathFinder):
    def __init__(self, accept: PathFilter, loader_cls: type[InstrumentingLoader]):
        self.accept = accept
        self.loader_cls = loader_cls

    def find_spec(self, fullname, path=None, target=None):
        for finder in sys.meta_path:
            if finder is self or not hasattr(finder, "find_spec"):
                continue
            spec = finder.find_spec(fullname, path, target)
            if spec is None:
                continue
            if (isinstance(spec.loader, importlib.machinery.SourceFileLoader)
                    and self.accept(spec.origin)):
                spec.loader = self.loader_cls(fullname, spec.origin)
            return spec
        return None


def install_hook(accept: PathFilter, register: Register, probes: bool) -> InstrumentingFinder:
    loader_cls = type("BoundInstrumentingLoader", (InstrumentingLoader,),
                      {"register": staticmethod(register), "probes": probes})
    finder = InstrumentingFinder(accept, loader_cls)
    sys.meta_path.insert(0, finder)
    return finder


def remove_hook(finder: InstrumentingFinder) -> None:
    try:
        sys.meta_path.remove(finder)
    except ValueError:
        pass


def install_helpers(helpers: dict[str, object]) -> None:
    for name, value in helpers.items():
        setattr(builtins, name, value)


def inert_helpers(count: int) -> dict[str, object]:
    """Helpers for code that outlives its agent: every probe stays off and nothing is retained."""
    def passthrough(idx, value):
        return value

    def ignore(idx):
        return None

    return {ON: [False] * count, PENDING: [False] * count, START: ignore, RETURN: passthrough,
            YIELD: passthrough, SEND: passthrough, UNWIND: ignore}


def retire_helpers(count: int) -> None:
    """Switches instrumented code over to inert helpers for good.

    Interpreter shutdown restores builtins to their startup state before it
    collects leftover generators and cycles, so the inert set also goes into
    every instrumented module's globals, which are still intact at that point.
    """
    inert = inert_helpers(count)
    install_helpers(inert)
    for module in list(instrumented_modules):
        module.__dict__.update(inert)


def remove_helpers(names) -> None:
    for name in names:
        if hasattr(builtins, name):
            delattr(builtins, name)
