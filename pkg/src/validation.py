from __future__ import annotations

from typing import Iterable, Sequence

from .errors import ColumnOutOfRange


def resolve_column(columns: Sequence[str], ref: int | str) -> int:
    """Map a column name or a 0-based index (int or digit string) to an index."""
    if isinstance(ref, bool):
        raise ColumnOutOfRange(ref, len(columns))
    if isinstance(ref, int):
        if 0 <= ref < len(columns):
            return ref
        raise ColumnOutOfRange(ref, len(columns))
    value = str(ref).strip()
    if value in columns:
        return list(columns).index(value)
    if value.isdigit():
        return resolve_column(columns, int(value))
    raise ColumnOutOfRange(value, len(columns))


def resolve_columns(columns: Sequence[str], refs: Iterable[int | str]) -> tuple[int, ...]:
    seen: set[int] = set()
    resolved: list[int] = []
    for ref in refs:
        idx = resolve_column(columns, ref)
        if idx in seen:
            continue
        seen.add(idx)
        resolved.append(idx)
    return tuple(resolved)


def split_csv_arg(raw: str | None) -> list[str]:
    if raw is None:
        return []
    return [item.strip() for item in raw.split(",") if item.strip()]
