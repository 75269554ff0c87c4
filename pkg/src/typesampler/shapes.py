"""Array shape capture and cross-trace shape generalization (opt-in)."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

logger = logging.getLogger(__name__)

# element-kind tokens understood by jaxtyping-style annotations
_KNOWN_KINDS = frozenset({
    "Bool", "Float16", "Float32", "Float64", "BFloat16",
    "Int8", "Int16", "Int32", "Int64", "UInt8", "UInt16", "UInt32", "UInt64",
    "Complex64", "Complex128",
})

_PREFIXES = (("uint", "UInt"), ("int", "Int"), ("bfloat", "BFloat"), ("float", "Float"),
             ("complex", "Complex"), ("bool", "Bool"))


@dataclass(frozen=True)
class ShapeObservation:
    element_kind: str
    dims: tuple[int, ...]


def element_kind(dtype_name: str) -> str | None:
    """Maps an element-type name such as ``float64`` to its kind token (``Float64``)."""
    for prefix, token in _PREFIXES:
        if dtype_name.startswith(prefix):
            kind = token + dtype_name[len(prefix):]
            return kind if kind in _KNOWN_KINDS else None
    return None


def observe(array) -> ShapeObservation | None:
    try:
        kind = element_kind(array.dtype.name)
        dims = tuple(int(d) for d in array.shape)
    except Exception:
        return None
    if kind is None:
        return None
    return ShapeObservation(kind, dims)


def generalize_shapes(columns: Sequence[Sequence]) -> list[tuple[int | str, ...] | None]:
    """Generalizes observed shapes into dimension tokens, one token tuple per column.

    Each column holds one shape per retained trace (entries that are not
    tuples mark traces where the position was absent).  A dimension slot that
    never changes stays a literal; varying slots become ``D1``, ``D2``, ...,
    shared between slots whose value sequences are identical.  Columns mixing
    ranks yield None.
    """
    ranks: list[int | None] = []
    for col in columns:
        present = [s for s in col if isinstance(s, tuple)]
        rank_set = {len(s) for s in present}
        if len(rank_set) != 1:
            logger.warning("mixed array ranks at one position; dropping shape")
            ranks.append(None)
        else:
            ranks.append(rank_set.pop())

    names: dict[tuple, str] = {}
    out: list[tuple[int | str, ...] | None] = []
    for col, rank in zip(columns, ranks):
        if rank is None:
            out.append(None)
            continue
        tokens: list[int | str] = []
        for axis in range(rank):
            seq = tuple(s[axis] if isinstance(s, tuple) else None for s in col)
            values = {v for v in seq if v is not None}
            if len(values) == 1:
                tokens.append(values.pop())
            else:
                if seq not in names:
                    names[seq] = f"D{len(names) + 1}"
                tokens.append(names[seq])
        out.append(tuple(tokens))
    return out
