"""Maps runtime values to TypeSpecs.

Type names are recorded raw (``__module__``/``__qualname__``) while the
target runs and canonicalized afterwards through an import-path map built by
scanning the loaded modules; unnamed builtin types fall back to structural
protocols, and standard containers are typed by sampling their contents.
"""

from __future__ import annotations

import builtins
import collections
import gc
import logging
import random
import sys
import threading
import types
import typing
from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from itertools import islice

from .trace_model import (
    ANY, ELLIPSIS, NEVER, NONE, ClassInfo, Kind, TypeSpec, concrete, generic, protocol,
    self_type, union_of,
)
from . import shapes

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_SIZE = 1000
DEFAULT_DEPTH = 3
MAX_TUPLE_ARITY = 10


# --- import paths ---------------------------------------------------------------

@dataclass(frozen=True)
class ImportPath:
    module: str
    name: str
    in_public_interface: bool
    has_underscore_component: bool
    package_of_origin: str
    path_length: int


def make_path(module: str, name: str, public: bool = False) -> ImportPath:
    parts = module.split(".") + name.split(".")
    return ImportPath(module, name, public, any(p.startswith("_") for p in parts),
                      module.split(".")[0], len(parts))


def select_canonical(paths: Iterable[ImportPath], defining_module: str | None = None) -> tuple[str, str]:
    """Picks one import path for a type.

    Each criterion narrows the candidates only when at least one candidate
    satisfies it: listed in the module's ``__all__``, free of underscore-prefixed
    components, from the defining package, fewest identifiers; ties go to the
    lexicographically smallest path.
    """
    cands = list(paths)
    if not cands:
        raise ValueError("select_canonical needs at least one path")

    def narrow(pred):
        nonlocal cands
        kept = [p for p in cands if pred(p)]
        if kept:
            cands = kept

    narrow(lambda p: p.in_public_interface)
    narrow(lambda p: not p.has_underscore_component)
    if defining_module:
        pkg = defining_module.split(".")[0]
        narrow(lambda p: p.package_of_origin == pkg)
    shortest = min(p.path_length for p in cands)
    narrow(lambda p: p.path_length == shortest)
    best = min(cands, key=lambda p: (p.module, p.name))
    return best.module, best.name


@dataclass
class ImportPathMap:
    by_type: dict[int, tuple[str, str]] = field(default_factory=dict)
    aliases: dict[int, list[ImportPath]] = field(default_factory=dict)
    _keep: dict[int, type] = field(default_factory=dict, repr=False)

    def lookup(self, t: type) -> tuple[str, str] | None:
        return self.by_type.get(id(t))

    def paths(self, t: type) -> list[ImportPath]:
        return self.aliases.get(id(t), [])


def build_import_map(modules: Mapping[str, types.ModuleType] | None = None) -> ImportPathMap:
    """Scans module namespaces for type definitions and records every path found."""
    if modules is None:
        modules = dict(sys.modules)
    result = ImportPathMap()
    for modname in sorted(modules):
        mod = modules[modname]
        if mod is None or modname == "__main__":
            continue
        try:
            ns = vars(mod)
            exported = ns.get("__all__")
            public = set(exported) if isinstance(exported, (list, tuple, set)) else set()
            items = list(ns.items())
        except Exception as e:  # exotic module objects
            logger.warning("skipping module %s: %s", modname, e)
            continue
        for name, obj in items:
            if not isinstance(name, str) or not isinstance(obj, type):
                continue
            key = id(obj)
            result._keep[key] = obj
            result.aliases.setdefault(key, []).append(make_path(modname, name, name in public))
    for key, paths in result.aliases.items():
        t = result._keep[key]
        defining = getattr(t, "__module__", None)
        result.by_type[key] = select_canonical(paths, defining if isinstance(defining, str) else None)
    return result


# --- protocols for unnamed builtin types ----------------------------------------

_VIEW_PROTOCOLS = {
    type({}.keys()): "KeysView",
    type({}.values()): "ValuesView",
    type({}.items()): "ItemsView",
}

_DICT_ITER_PART = {
    type(iter({}.keys())): "keys",
    type(iter({}.values())): "values",
    type(iter({}.items())): "items",
    type(reversed({}.keys())): "keys",
    type(reversed({}.values())): "values",
    type(reversed({}.items())): "items",
}

_FIXED_ELEMENT = {
    type(iter(range(0))): concrete("", "int"),
    type(iter(range(1 << 70))): concrete("", "int"),
    type(iter("")): concrete("", "str"),
    type(iter("ሴ")): concrete("", "str"),
    type(iter(b"")): concrete("", "int"),
    type(iter(bytearray())): concrete("", "int"),
}

# iterators whose only container referent is the sequence they walk
_CONTAINER_ITERATORS = frozenset(type(x) for x in (
    iter([]), reversed([]), iter(()), iter(set()), iter(collections.deque()), reversed(collections.deque()),
))

_MAPPINGS = {dict: "dict", collections.OrderedDict: "OrderedDict", collections.defaultdict: "defaultdict"}
_SEQUENCES = {list: "list", set: "set", frozenset: "frozenset", collections.deque: "deque"}


def _raw_name(t: type) -> tuple[str, str]:
    module = getattr(t, "__module__", None)
    name = getattr(t, "__qualname__", None)
    if not isinstance(name, str):
        name = getattr(t, "__name__", "?")
    return (module if isinstance(module, str) else ""), name


def _clean(module: str, name: str) -> bool:
    return not any(p.startswith("_") for p in module.split(".") + name.split("."))


def _directly_importable(t: type) -> bool:
    module, name = _raw_name(t)
    if "<" in name:
        return False
    obj = sys.modules.get(module)
    if obj is None:
        return False
    for part in name.split("."):
        obj = getattr(obj, part, None)
        if obj is None:
            return False
    return obj is t


class ObjectTyper:
    """Types runtime values.

    ``partial_generator`` is consulted for generator objects; it receives the
    generator's code object and returns a placeholder spec to be completed once
    the generator's iteration has been observed (or None).
    """

    def __init__(self, sample_size: int = DEFAULT_SAMPLE_SIZE, depth: int = DEFAULT_DEPTH,
                 seed: int = 0, infer_shapes: bool = False,
                 partial_generator: Callable[[types.CodeType], TypeSpec | None] | None = None):
        self.sample_size = sample_size
        self.depth = depth
        self.seed = seed
        self.rng = random.Random(seed)
        self.infer_shapes = infer_shapes
        self.partial_generator = partial_generator
        self.classes: dict[tuple[str, str], ClassInfo] = {}
        self.observed: dict[tuple[str, str], type] = {}
        self._heads: dict[type, TypeSpec] = {}
        self._budget = 0
        self._lock = threading.Lock()

    # -- names --

    def class_spec(self, t: type) -> TypeSpec:
        """Concrete spec for a class, recording its runtime facts on first sight."""
        head = self._heads.get(t)
        if head is None:
            head = self._class_head(t)
            self._heads[t] = head
        return head

    def _class_head(self, t: type) -> TypeSpec:
        if t is type(None):
            return NONE
        module, name = _raw_name(t)
        if "<locals>" in name:
            return ANY
        self.record_class(t)
        return concrete(module, name)

    def record_class(self, t: type) -> None:
        try:
            mro = t.__mro__
        except Exception:
            return
        for c in mro:
            key = _raw_name(c)
            if key[0] == "builtins":
                key = ("", key[1])
            if key in self.classes:
                continue
            try:
                attrs = frozenset(a for a in dir(c) if isinstance(a, str))
            except Exception:
                attrs = frozenset()
            self.observed[key] = c
            self.classes[key] = ClassInfo(key[0], key[1], tuple(
                ("" if m == "builtins" else m, n) for m, n in map(_raw_name, c.__mro__)), attrs)

    # -- values --

    def type_of(self, value, depth: int | None = None) -> TypeSpec:
        """Never raises; introspection problems degrade to ``Any``."""
        try:
            if depth is None:
                depth = self.depth
                self._budget = 4 * max(self.sample_size, 1)
            return self._type_of(value, depth)
        except Exception as e:
            logger.debug("typing failed: %r", e)
            return ANY

    def _type_of(self, value, depth: int) -> TypeSpec:
        t = type(value)
        if t is type(None):
            return NONE
        if t in (int, str, float, bool, bytes, complex):
            return self.class_spec(t)

        if t is tuple:
            return self._tuple(value, depth)
        if t in _SEQUENCES:
            return self._collection(value, t, depth)
        if t in _MAPPINGS:
            return self._mapping(value, t, depth)
        if t is collections.Counter:
            keys = self._types(islice(iter(value), self._take(len(value))), depth) if depth > 0 else [ANY]
            return generic("collections", "Counter", union_of(keys) if keys else NEVER)

        if t in _VIEW_PROTOCOLS:
            return self._view(value, t, depth)
        if t is types.GeneratorType:
            return self._generator(value)

        if isinstance(value, type):
            return generic("", "type", self.class_spec(value))

        if self.infer_shapes and t.__name__ == "ndarray" and t.__module__ == "numpy":
            obs = shapes.observe(value)
            if obs is not None:
                return TypeSpec(Kind.SHAPED, "jaxtyping", obs.element_kind,
                                (concrete("numpy", "ndarray"),), shape=obs.dims)

        try:
            orig = getattr(value, "__orig_class__", None) if not isinstance(value, types.ModuleType) else None
        except Exception:  # hostile __getattr__
            orig = None
        if orig is not None and typing.get_origin(orig) is t:
            return self.from_hint(orig)

        if not _directly_importable(t) or not _clean(*_raw_name(t)):
            if t in _DICT_ITER_PART or t in _FIXED_ELEMENT or (
                    _raw_name(t)[0] == "builtins" and isinstance(value, collections.abc.Iterator)):
                return self.type_iterator(value, depth)
        return self.class_spec(t)

    def _take(self, n: int) -> int:
        k = min(n, self.sample_size)
        if self._budget <= 0:
            k = min(k, 1)
        self._budget -= k
        return k

    def _types(self, elems: Iterable, depth: int) -> list[TypeSpec]:
        out = []
        try:
            for e in elems:
                out.append(self._type_of(e, depth - 1))
        except Exception as e:  # container mutated or iteration failed
            logger.debug("sampling stopped early: %r", e)
        return out

    def sample_elements(self, container) -> list:
        """Picks up to ``sample_size`` elements: uniformly for indexable sequences, first-k otherwise."""
        n = len(container)
        k = self._take(n)
        if k >= n:
            return list(container)
        if isinstance(container, (list, tuple)):
            idx = self.rng.sample(range(n), k)
            out = []
            for i in idx:
                try:
                    out.append(container[i])
                except IndexError:
                    break
            return out
        out = []
        try:
            for e in islice(iter(container), k):
                out.append(e)
        except Exception as e:
            logger.debug("sampling stopped early: %r", e)
        return out

    def sample_container(self, container, k: int | None = None) -> Counter:
        """Multiset of sampled element types; mappings yield ``(key, value)`` type pairs."""
        saved = self.sample_size
        if k is not None:
            self.sample_size = k
        try:
            self._budget = 4 * max(self.sample_size, 1)
            if isinstance(container, Mapping):
                keys = self.sample_elements(container)
                pairs = []
                for key in keys:
                    try:
                        pairs.append((self._type_of(key, self.depth - 1),
                                      self._type_of(container[key], self.depth - 1)))
                    except Exception:
                        break
                return Counter(pairs)
            return Counter(self._types(self.sample_elements(container), self.depth))
        finally:
            self.sample_size = saved

    def _tuple(self, value: tuple, depth: int) -> TypeSpec:
        if not value:
            return generic("", "tuple")
        if depth <= 0:
            return generic("", "tuple", ANY, ELLIPSIS)
        if len(value) <= MAX_TUPLE_ARITY:
            return generic("", "tuple", *(self._type_of(v, depth - 1) for v in value))
        elems = self._types(self.sample_elements(value), depth)
        return generic("", "tuple", union_of(elems) if elems else ANY, ELLIPSIS)

    def _collection(self, value, t: type, depth: int) -> TypeSpec:
        module = "collections" if t is collections.deque else ""
        if not value:
            return generic(module, _SEQUENCES[t], NEVER)
        if depth <= 0:
            return generic(module, _SEQUENCES[t], ANY)
        elems = self._types(self.sample_elements(value), depth)
        return generic(module, _SEQUENCES[t], union_of(elems) if elems else ANY)

    def _mapping(self, value, t: type, depth: int) -> TypeSpec:
        module = "" if t is dict else "collections"
        name = _MAPPINGS[t]
        if not value:
            return generic(module, name, NEVER, NEVER)
        if depth <= 0:
            return generic(module, name, ANY, ANY)
        k, v = self._pairs(value, depth)
        return generic(module, name, k, v)

    def _pairs(self, mapping, depth: int) -> tuple[TypeSpec, TypeSpec]:
        ks, vs = [], []
        try:
            for key in self.sample_elements(mapping):
                val = mapping[key]
                ks.append(self._type_of(key, depth - 1))
                vs.append(self._type_of(val, depth - 1))
        except Exception as e:
            logger.debug("sampling stopped early: %r", e)
        return (union_of(ks) if ks else ANY), (union_of(vs) if vs else ANY)

    def _view(self, view, t: type, depth: int) -> TypeSpec:
        name = _VIEW_PROTOCOLS[t]
        target = next((r for r in gc.get_referents(view) if isinstance(r, dict)), None)
        if target is None or depth <= 0:
            args = (ANY, ANY) if name == "ItemsView" else (ANY,)
            return protocol("collections.abc", name, *args)
        if not target:
            args = (NEVER, NEVER) if name == "ItemsView" else (NEVER,)
            return protocol("collections.abc", name, *args)
        k, v = self._pairs(target, depth)
        if name == "KeysView":
            return protocol("collections.abc", name, k)
        if name == "ValuesView":
            return protocol("collections.abc", name, v)
        return protocol("collections.abc", name, k, v)

    def type_iterator(self, it, depth: int | None = None) -> TypeSpec:
        """Iterator[element type], found through the iterator's referents without advancing it."""
        if depth is None:
            depth = self.depth
            self._budget = 4 * max(self.sample_size, 1)
        t = type(it)
        if t in _FIXED_ELEMENT:
            return protocol("collections.abc", "Iterator", _FIXED_ELEMENT[t])
        elem = ANY
        try:
            for ref in gc.get_referents(it):
                if isinstance(ref, dict) and t in _DICT_ITER_PART:
                    if not ref:
                        elem = NEVER
                        break
                    k, v = self._pairs(ref, depth)
                    part = _DICT_ITER_PART[t]
                    elem = k if part == "keys" else v if part == "values" else generic("", "tuple", k, v)
                    break
                if t in _CONTAINER_ITERATORS and isinstance(ref, (list, tuple, set, frozenset, collections.deque)):
                    if not ref:
                        elem = NEVER
                    else:
                        elems = self._types(self.sample_elements(ref), depth)
                        elem = union_of(elems) if elems else ANY
                    break
        except Exception as e:
            logger.debug("iterator referent lookup failed: %r", e)
            elem = ANY
        return protocol("collections.abc", "Iterator", elem)

    def _generator(self, gen) -> TypeSpec:
        if self.partial_generator is not None:
            spec = self.partial_generator(gen.gi_code)
            if spec is not None:
                return spec
        return protocol("collections.abc", "Generator", ANY, ANY, ANY)

    # -- annotations --

    def from_hint(self, hint) -> TypeSpec:
        """Converts a runtime annotation object into a TypeSpec (unknown forms become Any)."""
        try:
            return self._from_hint(hint)
        except Exception as e:
            logger.debug("cannot convert annotation %r: %r", hint, e)
            return ANY

    def _from_hint(self, hint) -> TypeSpec:
        if hint is None or hint is type(None):
            return NONE
        if hint is typing.Any:
            return ANY
        name = getattr(hint, "_name", None) or getattr(hint, "__name__", None)
        if name == "Self" and getattr(hint, "__module__", "") in ("typing", "typing_extensions"):
            return self_type()
        if hint is typing.NoReturn or name == "Never":
            return NEVER
        if isinstance(hint, typing.TypeVar):
            return ANY

        origin = typing.get_origin(hint)
        args = typing.get_args(hint)
        if origin is typing.Union or (sys.version_info >= (3, 10) and origin is types.UnionType):
            return union_of(self._from_hint(a) for a in args)
        if origin is typing.Literal:
            return union_of(self.class_spec(type(a)) for a in args)
        if origin is not None:
            if not isinstance(origin, type):
                return ANY
            head = self.class_spec(origin)
            if head.kind is not Kind.CONCRETE:
                return head
            if origin.__module__ == "collections.abc" and origin.__name__ == "Callable":
                return head
            conv = tuple(ELLIPSIS if a is Ellipsis else self._from_hint(a) for a in args)
            kind = Kind.PROTOCOL if origin.__module__ == "collections.abc" else Kind.GENERIC
            return TypeSpec(kind, head.module, head.name, conv)
        if isinstance(hint, type):
            return self.class_spec(hint)
        return ANY

    def release(self) -> None:
        """Drops references to the target's objects once they are no longer needed."""
        self.observed.clear()
        self._heads.clear()
        self.partial_generator = None

    # -- canonicalization --

    def canonical_names(self, import_map: ImportPathMap | None = None) -> dict[tuple[str, str], tuple[str, str]]:
        """Raw (module, qualname) -> canonical import path for every class seen so far."""
        out: dict[tuple[str, str], tuple[str, str]] = {}
        needs_map = []
        for raw, t in self.observed.items():
            module = raw[0] or "builtins"
            if module == "builtins" and getattr(builtins, raw[1], None) is t:
                out[raw] = raw
            elif _directly_importable(t) and _clean(module, raw[1]) and module != "__main__":
                needs_map.append((raw, t))
            elif module == "__main__":
                out[raw] = raw
            else:
                needs_map.append((raw, t))
        if needs_map:
            with self._lock:
                if import_map is None:
                    import_map = build_import_map()
            for raw, t in needs_map:
                path = import_map.lookup(t)
                if path is None:
                    out[raw] = raw
                else:
                    out[raw] = ("" if path[0] == "builtins" else path[0], path[1])
        return out


def rename(t: TypeSpec, names: Mapping[tuple[str, str], tuple[str, str]]) -> TypeSpec:
    """Rewrites raw class names inside a spec to their canonical paths."""
    if t.kind in (Kind.CONCRETE, Kind.GENERIC, Kind.PROTOCOL, Kind.SELF) and (t.module, t.name) in names:
        module, name = names[(t.module, t.name)]
        t = TypeSpec(t.kind, module, name, t.args, t.typevar_id, t.shape)
    if t.args:
        t = t.replace_args(rename(a, names) for a in t.args)
    return t
