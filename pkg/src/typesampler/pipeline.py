"""From trace stores to annotated files."""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from . import annotation_writer as writer
from .generalizer import Signature, filter_traces, generalize
from .method_typer import StubRepository, apply_self, context_for, prune_typevars, self_traces, widen_override
from .trace_model import CallTrace, FunctionKey, Kind, TraceStore, TypeSpec, merge_stores, read_store

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnotateConfig:
    coverage: float = 0.8
    target: tuple[int, int] = (3, 12)
    infer_shapes: bool = False
    overwrite: bool = False
    backup: bool = True
    diff: bool = False
    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()
    root: str | None = None
    use_stubs: bool = True


@dataclass
class Anomaly:
    fn: FunctionKey
    trace: CallTrace
    count: int
    share: float

    def to_json(self) -> dict:
        return {
            "fn": {"path": self.fn.source_path, "qualname": self.fn.qualified_name, "line": self.fn.first_line},
            "trace": _trace_sig(self.trace),
            "count": self.count,
            "share": round(self.share, 6),
        }


@dataclass
class AnnotateResult:
    edited: list[str] = field(default_factory=list)
    skipped: dict[str, str] = field(default_factory=dict)
    diffs: dict[str, str] = field(default_factory=dict)
    anomalies: list[Anomaly] = field(default_factory=list)
    signatures: dict[FunctionKey, Signature] = field(default_factory=dict)


def _trace_sig(tr: CallTrace) -> str:
    args = ", ".join(f"{n}: {t}" for n, t in zip(tr.arg_names, tr.arg_types))
    extra = f" yields {tr.yield_type}" if tr.yield_type is not None else ""
    return f"({args}) -> {tr.return_type}{extra}"


def load_stores(paths: Iterable[str]) -> TraceStore:
    store = TraceStore()
    for p in paths:
        store = merge_stores(store, read_store(p))
    return store


def _strip_shapes(t: TypeSpec) -> TypeSpec:
    if t.kind is Kind.SHAPED:
        return _strip_shapes(t.args[0])
    return t.replace_args(_strip_shapes(a) for a in t.args) if t.args else t


def infer_signature(fn: FunctionKey, traces: dict[CallTrace, int], store: TraceStore,
                    config: AnnotateConfig, stubs: StubRepository | None) -> tuple[Signature, list[Anomaly]]:
    """Filters, generalizes and post-processes one function's traces."""
    retained, dropped = filter_traces(traces, config.coverage)
    total = sum(traces.values())
    anomalies = [Anomaly(fn, tr, n, n / total) for tr, n in dropped]
    kept: Sequence[CallTrace] = [tr for tr, _ in retained]
    if not config.infer_shapes:
        kept = [tr.map_types(_strip_shapes) for tr in kept]
    info = store.methods.get(fn)
    ctx = context_for(fn.qualified_name, info, stubs) if info is not None else None
    if ctx is not None:
        kept = self_traces(kept, ctx)
    sig = generalize(kept, fn, store.classes)
    if ctx is not None:
        sig = apply_self(sig, ctx, config.target)
        sig = widen_override(sig, ctx, store.classes)
    sig = prune_typevars(sig)
    sig.refresh_imports()
    return sig, anomalies


def analyze(store: TraceStore, config: AnnotateConfig,
            stubs: StubRepository | None = None) -> tuple[dict[str, list[Signature]], list[Anomaly]]:
    by_file: dict[str, list[Signature]] = {}
    anomalies: list[Anomaly] = []
    for fn in sorted(store.entries, key=lambda k: (k.source_path, k.first_line, k.qualified_name)):
        traces = store.entries[fn]
        if not traces:
            continue
        try:
            sig, dropped = infer_signature(fn, traces, store, config, stubs)
        except Exception:  # one bad function must not sink the rest
            logger.exception("could not infer a signature for %s", fn)
            continue
        anomalies.extend(dropped)
        by_file.setdefault(fn.source_path, []).append(sig)
    return by_file, anomalies


def _selected(path: str, config: AnnotateConfig) -> bool:
    from .probes import PathFilter
    if not (config.include or config.exclude or config.root):
        return True
    return PathFilter(config.include, config.exclude, config.root, exclude_stdlib=False)(path)


def annotate(store: TraceStore, config: AnnotateConfig, stubs: StubRepository | None = None) -> AnnotateResult:
    """Runs the whole analysis and writes (or previews) the edits."""
    if stubs is None and config.use_stubs and any(m.parents for m in store.methods.values()):
        stubs = StubRepository()
    by_file, anomalies = analyze(store, config, stubs)
    result = AnnotateResult(anomalies=anomalies)
    for path in sorted(by_file):
        for sig in by_file[path]:
            result.signatures[sig.fn] = sig
        if not _selected(path, config):
            continue
        try:
            with open(path, encoding="utf-8", newline="") as f:
                old = f.read()
            is_main = store.main_path is not None and os.path.abspath(path) == os.path.abspath(store.main_path)
            new = writer.apply_edits(old, by_file[path], target=config.target, overwrite=config.overwrite,
                                     module_name=writer.module_name_for(path), path=path, is_main=is_main)
        except Exception as e:  # stale keys, unparsable or unreadable files
            logger.warning("skipping %s: %s", path, e)
            result.skipped[path] = str(e)
            continue
        if new == old:
            continue
        if config.diff:
            result.diffs[path] = writer.unified_diff(old, new, os.path.relpath(path))
        else:
            try:
                writer.write_atomic(path, new, backup=config.backup)
            except OSError as e:
                result.skipped[path] = str(e)
                continue
        result.edited.append(path)
    return result


def write_report(anomalies: Sequence[Anomaly], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a in anomalies:
            f.write(json.dumps(a.to_json(), sort_keys=False, ensure_ascii=False) + "\n")
