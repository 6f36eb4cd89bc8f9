from __future__ import annotations

from dataclasses import dataclass, field
import logging
import re
from typing import Mapping, Sequence

import numpy as np
import polars as pl

from .errors import BadCsv
from .utils import atomic_write_text
from .validation import resolve_column


_CLAMP_RE = re.compile(
    r"^(?P<column>[^=\s]+)=(?:(?P<tag>natural|non-natural)\((?P<tagged>[^)]*)\)|(?P<value>\S+))$"
)


@dataclass(frozen=True)
class Clamp:
    column: str
    value: float
    # only the nonlinear system's X3 branch reads this tag
    natural: bool | None = None

    def describe(self) -> str:
        if self.natural is None:
            return f"{self.column}={float(self.value)!r}"
        tag = "natural" if self.natural else "non-natural"
        return f"{self.column}={tag}({float(self.value)!r})"

    @classmethod
    def parse(cls, text: str) -> "Clamp":
        match = _CLAMP_RE.match(text.strip())
        if match is None:
            raise ValueError(f"cannot parse clamp: {text!r}")
        column = match.group("column")
        try:
            if match.group("tag"):
                return cls(
                    column=column,
                    value=float(match.group("tagged")),
                    natural=match.group("tag") == "natural",
                )
            return cls(column=column, value=float(match.group("value")))
        except ValueError as exc:
            raise ValueError(f"clamp value is not a number: {text!r}") from exc


@dataclass(frozen=True)
class Provenance:
    clamps: tuple[Clamp, ...] = ()

    @property
    def kind(self) -> str:
        return "interventional" if self.clamps else "observational"

    @property
    def clamped_columns(self) -> tuple[str, ...]:
        return tuple(clamp.column for clamp in self.clamps)

    def clamp_for(self, column: str) -> Clamp | None:
        for clamp in self.clamps:
            if clamp.column == column:
                return clamp
        return None

    def header(self) -> str:
        if not self.clamps:
            return "# provenance: observational"
        return "# intervention: " + ", ".join(clamp.describe() for clamp in self.clamps)

    @classmethod
    def parse_header(cls, lines: Sequence[str]) -> "Provenance":
        for raw in lines:
            line = raw.lstrip("#").strip()
            if line.startswith("intervention:"):
                body = line.split(":", 1)[1]
                parts = [part.strip() for part in body.split(",") if part.strip()]
                return cls(clamps=tuple(Clamp.parse(part) for part in parts))
        return cls()


@dataclass(frozen=True)
class Dataset:
    columns: tuple[str, ...]
    values: np.ndarray
    provenance: Provenance = field(default_factory=Provenance)
    # level names for categorical columns; codes index into the tuple
    labels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        columns = tuple(str(name) for name in self.columns)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise ValueError("dataset values must be a 2-D matrix")
        if values.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if values.shape[1] != len(columns):
            raise ValueError(
                f"dataset has {values.shape[1]} value columns but {len(columns)} names"
            )
        if len(set(columns)) != len(columns):
            raise ValueError("column names must be unique")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset entries must be finite")
        for name in self.labels:
            if name not in columns:
                raise ValueError(f"labels given for unknown column {name!r}")
        values.setflags(write=False)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", dict(self.labels))

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_columns(self) -> int:
        return int(self.values.shape[1])

    def index_of(self, ref: int | str) -> int:
        return resolve_column(self.columns, ref)

    def column(self, ref: int | str) -> np.ndarray:
        return self.values[:, self.index_of(ref)]

    def is_categorical(self, ref: int | str) -> bool:
        return self.columns[self.index_of(ref)] in self.labels

    def label_of(self, ref: int | str, code: float) -> str:
        name = self.columns[self.index_of(ref)]
        levels = self.labels.get(name)
        if levels is None:
            value = float(code)
            return str(int(value)) if value.is_integer() else repr(value)
        return levels[int(code)]

    def select_rows(self, rows: np.ndarray | Sequence[int]) -> "Dataset":
        picked = np.asarray(rows)
        return Dataset(self.columns, self.values[picked], self.provenance, self.labels)

    def with_column(self, ref: int | str, values: np.ndarray) -> "Dataset":
        idx = self.index_of(ref)
        updated = np.array(self.values, copy=True)
        updated[:, idx] = np.asarray(values, dtype=float)
        return Dataset(self.columns, updated, self.provenance, self.labels)

    def to_frame(self) -> pl.DataFrame:
        data: dict[str, pl.Series] = {}
        for idx, name in enumerate(self.columns):
            col = self.values[:, idx]
            levels = self.labels.get(name)
            if levels is None:
                data[name] = pl.Series(name, col, dtype=pl.Float64)
            else:
                data[name] = pl.Series(name, [levels[int(code)] for code in col], dtype=pl.String)
        return pl.DataFrame(data)


def _comment_lines(path: str) -> list[str]:
    lines: list[str] = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            lines.append(line.rstrip("\n"))
    return lines


def read_csv(path: str) -> Dataset:
    log = logging.getLogger(__name__)
    try:
        header = _comment_lines(path)
        frame = pl.read_csv(path, comment_prefix="#")
    except (OSError, UnicodeDecodeError, pl.exceptions.PolarsError) as exc:
        raise BadCsv(f"cannot read {path}: {exc}") from exc
    if frame.height == 0 or frame.width == 0:
        raise BadCsv(f"{path} has no data rows")
    try:
        provenance = Provenance.parse_header(header)
    except ValueError as exc:
        raise BadCsv(f"{path}: bad provenance header: {exc}") from exc

    columns: list[np.ndarray] = []
    labels: dict[str, tuple[str, ...]] = {}
    for name, dtype in frame.schema.items():
        series = frame.get_column(name)
        if series.null_count():
            raise BadCsv(f"{path}: column {name!r} has missing values")
        if dtype == pl.String or dtype == pl.Categorical:
            raw = series.cast(pl.String).to_list()
            levels = tuple(sorted(set(raw)))
            lookup = {level: code for code, level in enumerate(levels)}
            columns.append(np.asarray([lookup[item] for item in raw], dtype=float))
            labels[name] = levels
            continue
        if not (dtype.is_numeric() or dtype == pl.Boolean):
            raise BadCsv(f"{path}: column {name!r} has unsupported type {dtype}")
        values = series.cast(pl.Float64).to_numpy()
        if not np.all(np.isfinite(values)):
            raise BadCsv(f"{path}: column {name!r} has non-finite values")
        columns.append(values)
    try:
        ds = Dataset(tuple(frame.columns), np.column_stack(columns), provenance, labels)
    except ValueError as exc:
        raise BadCsv(f"{path}: {exc}") from exc
    log.debug(
        "Dataset loaded: path=%s rows=%s columns=%s provenance=%s",
        path,
        ds.n_rows,
        ds.n_columns,
        provenance.kind,
    )
    return ds


def write_csv(ds: Dataset, path: str) -> None:
    body = ds.to_frame().write_csv()
    atomic_write_text(path, ds.provenance.header() + "\n" + body)
