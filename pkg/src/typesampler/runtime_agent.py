"""Collects call traces from a running program.

Function starts, returns, yields and exceptional exits are observed either
through ``sys.monitoring`` (3.12+) or through probes compiled into the traced
modules.  Every executed function is sampled on its first call; a location
whose latest sample repeated an already-known trace is then switched off, and
a self-profiling timer switches all locations back on whenever the share of
time spent in this package drops below the configured budget.
"""

from __future__ import annotations

import importlib.util
import logging
import os
import sys
import threading
import types
from collections import deque
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from itertools import islice

from . import probes
from .object_typer import ObjectTyper, rename
from .trace_model import (
    ANY, NEVER, NONE, CallTrace, ClassInfo, FunctionKey, Kind, MethodInfo, ParentMethod,
    TraceStore, TypeSpec, protocol, union_of,
)

logger = logging.getLogger(__name__)

TOOL_DIR = os.path.dirname(os.path.realpath(__file__)) + os.sep
HAS_MONITORING = hasattr(sys, "monitoring")

_CO_OPTIMIZED = 0x1
_CO_VARARGS = 0x4
_CO_VARKEYWORDS = 0x8
_CO_GENERATOR = 0x20
_CO_ASYNC_GENERATOR = 0x200


# --- overhead control -----------------------------------------------------------

class SamplingController:
    """Windowed estimate of the time share spent in tool code, and the re-enable rule."""

    def __init__(self, budget: float = 0.05, check_interval: float = 0.01, window: int = 100,
                 on_reenable: Callable[[set], None] | None = None):
        if not 0 < budget <= 1:
            raise ValueError(f"budget must be in (0, 1], got {budget}")
        if window < 1:
            raise ValueError("window must be positive")
        self.budget = budget
        self.check_interval = check_interval
        self.window = window
        self.self_fraction = 0.0
        self.disabled_locations: set = set()
        self.on_reenable = on_reenable
        self.reenable_count = 0
        self._ticks: deque[bool] = deque(maxlen=window)
        self._in_tool = 0
        self._lock = threading.Lock()

    def disable(self, location) -> None:
        with self._lock:
            self.disabled_locations.add(location)

    def profile_tick(self, in_tool: bool) -> bool:
        """Records one profiling sample; returns True when the re-enable action fired."""
        with self._lock:
            if len(self._ticks) == self.window:
                self._in_tool -= self._ticks[0]
            self._ticks.append(bool(in_tool))
            self._in_tool += bool(in_tool)
            self.self_fraction = self._in_tool / len(self._ticks)
            fire = self.self_fraction < self.budget
            if fire:
                released, self.disabled_locations = self.disabled_locations, set()
                self.reenable_count += 1
        if fire and self.on_reenable is not None:
            self.on_reenable(released)
        return fire


def profile_tick(controller: SamplingController, in_tool: bool) -> SamplingController:
    controller.profile_tick(in_tool)
    return controller


def _stdlib_dirs() -> tuple[str, ...]:
    import sysconfig
    out = set()
    for key in ("stdlib", "platstdlib"):
        try:
            out.add(os.path.realpath(sysconfig.get_path(key)) + os.sep)
        except Exception:
            pass
    return tuple(sorted(out))


def stack_in_tool(frame: types.FrameType | None, tool_dir: str = TOOL_DIR,
                  neutral: tuple[str, ...] = ()) -> bool:
    """True when the innermost non-library frame of a stack belongs to the tool."""
    while frame is not None:
        fn = frame.f_code.co_filename
        if fn.startswith(tool_dir):
            return True
        if not (fn.startswith(neutral) or fn.startswith("<")):
            return False
        frame = frame.f_back
    return False


class SelfProfiler(threading.Thread):
    def __init__(self, controller: SamplingController, tool_dir: str = TOOL_DIR):
        super().__init__(name="typesampler-profiler", daemon=True)
        self.controller = controller
        self.tool_dir = tool_dir
        self.neutral = _stdlib_dirs()
        self._stop_event = threading.Event()

    def run(self) -> None:
        me = threading.get_ident()
        while not self._stop_event.wait(self.controller.check_interval):
            try:
                frames = sys._current_frames()
                in_tool = any(stack_in_tool(f, self.tool_dir, self.neutral)
                              for tid, f in frames.items() if tid != me)
                del frames
                self.controller.profile_tick(in_tool)
            except Exception as e:  # keep ticking
                logger.debug("profiler tick failed: %r", e)

    def stop(self) -> None:
        self._stop_event.set()


# --- agent ---------------------------------------------------------------------------

@dataclass
class AgentConfig:
    budget: float = 0.05
    interval: float = 0.01
    window: int = 100
    sample_size: int = 1000
    depth: int = 3
    seed: int = 0
    infer_shapes: bool = False
    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()
    root: str | None = None
    backend: str = "auto"  # "auto", "monitoring" or "probes"


class Location:
    __slots__ = ("idx", "key", "params", "is_generator", "code", "last_repeat", "pending",
                 "method_done", "start_disabled", "local_events")

    def __init__(self, idx: int, key: FunctionKey, params: tuple[str, ...], is_generator: bool):
        self.idx = idx
        self.key = key
        self.params = params
        self.is_generator = is_generator
        self.code: types.CodeType | None = None
        self.last_repeat = False
        self.pending = 0
        self.method_done = False
        self.start_disabled = False
        self.local_events = False

    def __repr__(self) -> str:
        return f"Location({self.key})"


@dataclass
class PendingCall:
    fn: FunctionKey
    arg_names: tuple[str, ...]
    arg_types: tuple[TypeSpec, ...]
    frame: types.FrameType
    yield_types: set[TypeSpec] = field(default_factory=set)
    send_types: set[TypeSpec] = field(default_factory=set)


_PARTIAL = "partial:"


class Agent:
    def __init__(self, config: AgentConfig | None = None):
        self.config = config = config or AgentConfig()
        self.store = TraceStore(seed=config.seed)
        self.typer = ObjectTyper(config.sample_size, config.depth, config.seed, config.infer_shapes,
                                 partial_generator=self._partial_generator)
        self.locations: list[Location] = []
        self.by_key: dict[FunctionKey, Location] = {}
        self.by_line: dict[tuple[str, int, str], Location] = {}
        self.by_code: dict[types.CodeType, Location] = {}
        self.on: list[bool] = []
        self.pend: list[bool] = []
        self.pending: dict[int, PendingCall] = {}
        self.controller = SamplingController(config.budget, config.interval, config.window,
                                             on_reenable=self._reenable)
        self.accept = probes.PathFilter(config.include, config.exclude, config.root)
        self._local = threading.local()
        self._record_lock = threading.Lock()
        self._profiler: SelfProfiler | None = None
        self._finder: probes.InstrumentingFinder | None = None
        self.backend = self._choose_backend(config.backend)
        self.finalized = False

    @staticmethod
    def _choose_backend(name: str) -> str:
        if name == "auto":
            return "monitoring" if HAS_MONITORING else "probes"
        if name == "monitoring" and not HAS_MONITORING:
            raise RuntimeError("sys.monitoring is unavailable on this interpreter")
        if name not in ("monitoring", "probes"):
            raise ValueError(f"unknown backend {name!r}")
        return name

    # -- locations --

    def register(self, site: probes.FunctionSite) -> int:
        key = FunctionKey(site.path, site.qualname, site.first_line)
        loc = self.by_key.get(key)
        if loc is not None:
            return loc.idx
        loc = Location(len(self.locations), key, site.params, site.is_generator)
        self.locations.append(loc)
        self.on.append(True)
        self.pend.append(False)
        self.by_key[key] = loc
        self.by_line[(site.path, site.first_line, site.qualname.rsplit(".", 1)[-1])] = loc
        return loc.idx

    def location_for_code(self, code: types.CodeType) -> Location | None:
        loc = self.by_code.get(code)
        if loc is not None:
            return loc
        loc = self.by_line.get((code.co_filename, code.co_firstlineno, code.co_name))
        if loc is None:
            if (not code.co_flags & _CO_OPTIMIZED or code.co_name.startswith("<")
                    or not self.accept(code.co_filename)):
                return None
            qualname = getattr(code, "co_qualname", code.co_name)
            idx = self.register(probes.FunctionSite(
                code.co_filename, qualname, code.co_firstlineno, _code_params(code),
                bool(code.co_flags & (_CO_GENERATOR | _CO_ASYNC_GENERATOR)), False))
            loc = self.locations[idx]
        loc.code = code
        self.by_code[code] = loc
        return loc

    # -- sampling state --

    def _disable(self, loc: Location) -> None:
        self.on[loc.idx] = False
        loc.start_disabled = True
        self.controller.disable(loc)

    def _reenable(self, locs: Iterable[Location]) -> None:
        if self.backend == "monitoring":
            for loc in self.locations:
                loc.start_disabled = False
            try:
                sys.monitoring.restart_events()
            except Exception as e:
                logger.debug("restart_events failed: %r", e)
            return
        for loc in locs:
            loc.start_disabled = False
            self.on[loc.idx] = True

    # -- events --

    def on_start(self, loc: Location, frame: types.FrameType) -> PendingCall | None:
        """Samples one call; afterwards the location is switched off if its last sample repeated."""
        tl = self._local
        if getattr(tl, "busy", False):
            return None
        tl.busy = True
        try:
            if loc.code is None:
                loc.code = frame.f_code
                self.by_code[frame.f_code] = loc
            f_locals = frame.f_locals
            types_ = tuple(self._param_type(name, f_locals) for name in loc.params)
            pc = PendingCall(loc.key, loc.params, types_, frame)
            self.pending[id(frame)] = pc
            loc.pending += 1
            self.pend[loc.idx] = True
            if not loc.method_done:
                loc.method_done = True
                self._capture_method(loc, frame, f_locals)
            if loc.last_repeat:
                self._disable(loc)
            return pc
        except Exception as e:
            logger.debug("start event failed for %s: %r", loc.key, e)
            return None
        finally:
            tl.busy = False

    def _param_type(self, name: str, f_locals) -> TypeSpec:
        raw = name.lstrip("*")
        if raw not in f_locals:
            return ANY
        value = f_locals[raw]
        if name.startswith("**"):
            items = islice(value.values(), self.config.sample_size) if isinstance(value, dict) else ()
            return union_of(self.typer.type_of(v) for v in items)
        if name.startswith("*"):
            items = islice(value, self.config.sample_size) if isinstance(value, tuple) else ()
            return union_of(self.typer.type_of(v) for v in items)
        return self.typer.type_of(value)

    def _pop(self, loc: Location, frame: types.FrameType) -> PendingCall | None:
        pc = self.pending.pop(id(frame), None)
        if pc is None:
            return None
        if pc.frame is not frame:
            self.pending[id(frame)] = pc
            return None
        loc.pending -= 1
        if loc.pending <= 0:
            loc.pending = 0
            self.pend[loc.idx] = False
        return pc

    def on_return(self, loc: Location, frame: types.FrameType, value) -> None:
        pc = self._pop(loc, frame)
        if pc is None:
            return
        tl = self._local
        tl.busy = True
        try:
            self._finish(loc, pc, NONE if value is None else self.typer.type_of(value))
        except Exception as e:
            logger.debug("return event failed for %s: %r", loc.key, e)
        finally:
            tl.busy = False

    def on_yield(self, loc: Location, frame: types.FrameType, value) -> None:
        pc = self.pending.get(id(frame))
        if pc is None or pc.frame is not frame:
            return
        tl = self._local
        tl.busy = True
        try:
            pc.yield_types.add(NONE if value is None else self.typer.type_of(value))
        except Exception as e:
            logger.debug("yield event failed for %s: %r", loc.key, e)
        finally:
            tl.busy = False

    def on_send(self, loc: Location, frame: types.FrameType, value) -> None:
        pc = self.pending.get(id(frame))
        if pc is None or pc.frame is not frame:
            return
        tl = self._local
        tl.busy = True
        try:
            pc.send_types.add(NONE if value is None else self.typer.type_of(value))
        except Exception as e:
            logger.debug("send event failed for %s: %r", loc.key, e)
        finally:
            tl.busy = False

    def on_unwind(self, loc: Location, frame: types.FrameType, exc: BaseException | None) -> None:
        """Exceptional exit: no trace, except for a generator closed after it yielded."""
        pc = self._pop(loc, frame)
        if pc is None:
            return
        if loc.is_generator and pc.yield_types and isinstance(exc, GeneratorExit):
            self._finish(loc, pc, NEVER)

    def _finish(self, loc: Location, pc: PendingCall, ret: TypeSpec) -> None:
        y = s = None
        if loc.is_generator:
            y = union_of(pc.yield_types)
        if pc.send_types:
            s = union_of(pc.send_types)
        trace = CallTrace(pc.arg_names, pc.arg_types, ret, y, s)
        with self._record_lock:
            known = self.store.entries.get(loc.key)
            repeat = known is not None and trace in known
            self.store.add(loc.key, trace)
        loc.last_repeat = repeat

    # -- methods --

    def _capture_method(self, loc: Location, frame: types.FrameType, f_locals) -> None:
        qualname = loc.key.qualified_name
        if "." not in qualname:
            return
        name = qualname.rsplit(".", 1)[1]
        code = frame.f_code
        cls = _walk_qualname(frame.f_globals, qualname)
        if cls is None or _member(cls, name, code) is None:
            cls = None
            first = f_locals.get(loc.params[0]) if loc.params and not loc.params[0].startswith("*") else None
            if first is not None:
                mro = first.__mro__ if isinstance(first, type) else type(first).__mro__
                cls = next((c for c in mro if _member(c, name, code) is not None), None)
        if cls is None:
            return
        member = _member(cls, name, code)
        first = f_locals.get(loc.params[0]) if loc.params else None
        if isinstance(member, staticmethod):
            receiver = "none"
        elif isinstance(member, classmethod):
            receiver = "class"
        elif loc.params and not loc.params[0].startswith("*") and isinstance(first, cls):
            receiver = "instance"
        elif isinstance(first, type) and issubclass(first, cls):
            receiver = "class"
        else:
            receiver = "none"
        head = self.typer.class_spec(cls)
        if head.kind is not Kind.CONCRETE:
            return
        parents = []
        for base in cls.__mro__[1:]:
            if name in vars(base):
                parents.append(self._parent(base, vars(base)[name], receiver != "none"))
        mro = tuple((c.module, c.name) for c in (self.typer.class_spec(b) for b in cls.__mro__)
                    if c.kind is Kind.CONCRETE)
        self.store.methods[loc.key] = MethodInfo((head.module, head.name), receiver, mro, tuple(parents))

    def _parent(self, owner: type, member, has_receiver: bool) -> ParentMethod:
        import inspect
        import typing
        head = self.typer.class_spec(owner)
        fn = _unwrap(member)
        try:
            sig = inspect.signature(fn)
        except (TypeError, ValueError):
            return ParentMethod((head.module, head.name))
        try:
            hints = typing.get_type_hints(fn)
        except Exception:
            hints = {}
        params = list(sig.parameters.values())
        if has_receiver and params and not isinstance(member, staticmethod):
            params = params[1:]
        out = []
        for p in params:
            t = self.typer.from_hint(hints[p.name]) if p.name in hints else None
            out.append((p.name, p.kind.name, t))
        ret = self.typer.from_hint(hints["return"]) if "return" in hints else None
        return ParentMethod((head.module, head.name), tuple(out), ret, bool(hints))

    # -- generator values --

    def _partial_generator(self, code: types.CodeType) -> TypeSpec | None:
        loc = self.by_code.get(code) or self.by_line.get((code.co_filename, code.co_firstlineno, code.co_name))
        if loc is None:
            return None
        return TypeSpec(Kind.ANY, "", _PARTIAL + str(loc.idx))

    # -- lifecycle --

    def start(self) -> None:
        """Installs the event source and starts self-profiling."""
        if self.backend == "monitoring":
            self._install_monitoring()
        else:
            probes.install_helpers(self._helpers())
            self._finder = probes.install_hook(self.accept, self.register, probes=True)
        if self.backend == "monitoring":
            self._finder = probes.install_hook(self.accept, self.register, probes=False)
        self._profiler = SelfProfiler(self.controller)
        self._profiler.start()

    def stop(self) -> None:
        if self._profiler is not None:
            self._profiler.stop()
            self._profiler.join(timeout=1.0)
            self._profiler = None
        if self._finder is not None:
            probes.remove_hook(self._finder)
            self._finder = None
        if self.backend == "monitoring":
            self._uninstall_monitoring()
        for i in range(len(self.on)):
            self.on[i] = False

    def _helpers(self) -> dict[str, object]:
        locs = self.locations
        getframe = sys._getframe

        def start(idx):
            self.on_start(locs[idx], getframe(1))

        def ret(idx, value):
            self.on_return(locs[idx], getframe(1), value)
            return value

        def yld(idx, value):
            self.on_yield(locs[idx], getframe(1), value)
            return value

        def send(idx, value):
            if self.pend[idx]:
                self.on_send(locs[idx], getframe(1), value)
            return value

        def unwind(idx):
            self.on_unwind(locs[idx], getframe(1), sys.exc_info()[1])

        return {probes.ON: self.on, probes.PENDING: self.pend, probes.START: start,
                probes.RETURN: ret, probes.YIELD: yld, probes.SEND: send, probes.UNWIND: unwind}

    def finalize(self) -> TraceStore:
        """Stops collection and produces the final store with canonical type names."""
        if self.finalized:
            return self.store
        self.stop()
        self.finalized = True
        for pc in list(self.pending.values()):
            loc = self.by_key.get(pc.fn)
            if loc is not None and loc.is_generator and pc.yield_types:
                self._finish(loc, pc, NEVER)  # generator never observed to finish
        self.pending.clear()
        self._complete_partials()
        self.store.classes = dict(self.typer.classes)
        names = self.typer.canonical_names()
        _map_store(self.store, lambda t: rename(t, names), names)
        # Finalizers in the target may still run instrumented code, as late as interpreter shutdown;
        # leave them helpers that hold nothing so its objects are collected as they would be untraced.
        self.typer.release()
        self.by_code.clear()
        probes.retire_helpers(len(self.locations))
        return self.store

    def _complete_partials(self) -> None:
        done: dict[str, TypeSpec] = {}
        for loc in self.locations:
            ys = [t.yield_type for t in self.store.entries.get(loc.key, {}) if t.yield_type is not None]
            y = union_of(ys) if ys else ANY
            done[_PARTIAL + str(loc.idx)] = protocol("collections.abc", "Generator", y, ANY, ANY)

        def fill(t: TypeSpec) -> TypeSpec:
            if t.kind is Kind.ANY and t.name.startswith(_PARTIAL):
                return done.get(t.name, protocol("collections.abc", "Generator", ANY, ANY, ANY))
            return t.replace_args(fill(a) for a in t.args) if t.args else t
        _map_store(self.store, fill, None)

    # -- monitoring backend --

    def _install_monitoring(self) -> None:
        mon = sys.monitoring
        for tid in (4, 3, 5, 1, 0):
            if mon.get_tool(tid) is None:
                mon.use_tool_id(tid, "typesampler")
                break
        else:
            raise RuntimeError("no free sys.monitoring tool id")
        self._tool_id = tid
        ev = mon.events
        disable = mon.DISABLE
        pending = self.pending

        def on_start(code, offset):
            loc = self.by_code.get(code) or self.location_for_code(code)
            if loc is None:
                return disable
            if loc.start_disabled:
                return disable
            self.on_start(loc, sys._getframe(1))
            if not loc.local_events:
                loc.local_events = True
                mon.set_local_events(tid, code, ev.PY_RETURN | ev.PY_YIELD)
            return disable if loc.start_disabled else None

        def on_return(code, offset, retval):
            loc = self.by_code.get(code)
            if loc is None or not loc.pending:
                return disable if loc is None or loc.start_disabled else None
            self.on_return(loc, sys._getframe(1), retval)
            return None

        def on_yield(code, offset, retval):
            loc = self.by_code.get(code)
            if loc is None or not loc.pending:
                return disable if loc is None or loc.start_disabled else None
            if loc.is_generator:
                self.on_yield(loc, sys._getframe(1), retval)
            return None

        def on_unwind(code, offset, exc):
            if pending:
                loc = self.by_code.get(code)
                if loc is not None and loc.pending:
                    self.on_unwind(loc, sys._getframe(1), exc)

        mon.register_callback(tid, ev.PY_START, on_start)
        mon.register_callback(tid, ev.PY_RETURN, on_return)
        mon.register_callback(tid, ev.PY_YIELD, on_yield)
        mon.register_callback(tid, ev.PY_UNWIND, on_unwind)
        mon.set_events(tid, ev.PY_START | ev.PY_UNWIND)
        helpers = self._helpers()
        probes.install_helpers({probes.SEND: helpers[probes.SEND]})

    def _uninstall_monitoring(self) -> None:
        tid = getattr(self, "_tool_id", None)
        if tid is None:
            return
        mon = sys.monitoring
        mon.set_events(tid, 0)
        for code in self.by_code:
            try:
                mon.set_local_events(tid, code, 0)
            except Exception:
                pass
        for e in (mon.events.PY_START, mon.events.PY_RETURN, mon.events.PY_YIELD, mon.events.PY_UNWIND):
            mon.register_callback(tid, e, None)
        mon.free_tool_id(tid)
        self._tool_id = None

    # -- running targets --

    def run_path(self, path: str, argv: list[str]) -> None:
        """Executes a script as ``__main__`` with its functions instrumented."""
        path = os.path.abspath(path)
        self.store.main_path = path
        with open(path, "rb") as f:
            source = f.read()
        code = probes.compile_source(source, path, self.register, probes=self.backend == "probes")
        main = types.ModuleType("__main__")
        main.__file__ = path
        main.__builtins__ = __builtins__
        main.__loader__ = None
        main.__spec__ = None
        sys.modules["__main__"] = main
        probes.instrumented_modules.add(main)
        sys.argv = [path, *argv]
        sys.path.insert(0, os.path.dirname(path))
        try:
            exec(code, main.__dict__)
        finally:
            _join_threads()

    def run_module(self, name: str, argv: list[str]) -> None:
        """Executes a module (or a package's ``__main__``) as ``__main__``, like ``python -m``."""
        sys.path.insert(0, os.getcwd())
        spec = importlib.util.find_spec(name)
        if spec is None:
            raise ImportError(f"No module named {name!r}")
        if spec.submodule_search_locations is not None:
            spec = importlib.util.find_spec(name + ".__main__")
            if spec is None:
                raise ImportError(f"No module named {name}.__main__; {name!r} is a package")
        if spec.loader is None or not hasattr(spec.loader, "get_code"):
            raise ImportError(f"cannot run {name!r}: no code loader")
        code = spec.loader.get_code(spec.name)
        if code is None:
            raise ImportError(f"no code object available for {name!r}")
        main = types.ModuleType("__main__")
        main.__file__ = spec.origin
        main.__loader__ = spec.loader
        main.__package__ = spec.parent
        main.__spec__ = spec
        main.__builtins__ = __builtins__
        if spec.origin:
            self.store.main_path = os.path.abspath(spec.origin)
        sys.modules["__main__"] = main
        probes.instrumented_modules.add(main)
        sys.argv = [spec.origin or name, *argv]
        try:
            exec(code, main.__dict__)
        finally:
            _join_threads()


def _join_threads() -> None:
    """Waits for the target's non-daemon threads, as interpreter shutdown would."""
    me = threading.current_thread()
    for t in threading.enumerate():
        if t is not me and not t.daemon and t.is_alive():
            t.join()


def _code_params(code: types.CodeType) -> tuple[str, ...]:
    names = code.co_varnames
    n_pos = code.co_argcount
    n_kw = code.co_kwonlyargcount
    out = list(names[:n_pos])
    i = n_pos + n_kw
    if code.co_flags & _CO_VARARGS:
        out.append("*" + names[i])
        i += 1
    out.extend(names[n_pos:n_pos + n_kw])
    if code.co_flags & _CO_VARKEYWORDS:
        out.append("**" + names[i])
    return tuple(out)


def _unwrap(member):
    if isinstance(member, (staticmethod, classmethod)):
        member = member.__func__
    if isinstance(member, property):
        member = member.fget
    seen = 0
    while hasattr(member, "__wrapped__") and seen < 20:
        member = member.__wrapped__
        seen += 1
    return member


def _member(cls: type, name: str, code: types.CodeType):
    try:
        member = vars(cls).get(name)
    except TypeError:
        return None
    if member is None:
        return None
    candidates = [member]
    if isinstance(member, property):
        candidates = [member.fget, member.fset, member.fdel]
    for c in candidates:
        fn = _unwrap(c) if c is not None else None
        if getattr(fn, "__code__", None) is code:
            return member
    return None


def _walk_qualname(namespace: dict, qualname: str) -> type | None:
    parts = qualname.split(".")[:-1]
    if not parts or "<locals>" in parts:
        return None
    obj = namespace.get(parts[0])
    for p in parts[1:]:
        obj = getattr(obj, p, None)
    return obj if isinstance(obj, type) else None


def _map_parent(p: ParentMethod, f, names) -> ParentMethod:
    owner = names.get(p.owner, p.owner) if names else p.owner
    return ParentMethod(owner, tuple((n, k, None if t is None else f(t)) for n, k, t in p.params),
                        None if p.return_type is None else f(p.return_type), p.annotated)


def _map_store(store: TraceStore, f: Callable[[TypeSpec], TypeSpec],
               names: dict[tuple[str, str], tuple[str, str]] | None) -> None:
    entries = store.entries
    store.entries = {}
    for fn, traces in entries.items():
        for trace, n in traces.items():
            store.add(fn, trace.map_types(f), n)
    methods = {}
    for fn, m in store.methods.items():
        rn = (lambda k: names.get(k, k)) if names else (lambda k: k)
        methods[fn] = MethodInfo(rn(m.defining_class), m.receiver, tuple(rn(c) for c in m.ancestors),
                                 tuple(_map_parent(p, f, names) for p in m.parents))
    store.methods = methods
    if names:
        classes = {}
        for key, c in store.classes.items():
            nk = names.get(key, key)
            classes[nk] = ClassInfo(nk[0], nk[1], tuple(names.get(x, x) for x in c.ancestors), c.attrs)
        store.classes = classes
