from __future__ import annotations

import math

import numpy as np
import pytest

from src.dataset import Clamp, Dataset, Provenance, read_csv, write_csv
from src.errors import BadCsv, ColumnOutOfRange
from src.validation import resolve_column, resolve_columns, split_csv_arg


def test_resolve_column_by_name_and_index():
    columns = ("C", "X", "Y")
    assert resolve_column(columns, "Y") == 2
    assert resolve_column(columns, 1) == 1
    assert resolve_column(columns, "0") == 0
    assert resolve_columns(columns, ["X", 1, "Y"]) == (1, 2)
    with pytest.raises(ColumnOutOfRange) as info:
        resolve_column(columns, 3)
    assert info.value.width == 3
    with pytest.raises(ColumnOutOfRange):
        resolve_column(columns, "Z")


def test_split_csv_arg():
    assert split_csv_arg(None) == []
    assert split_csv_arg("") == []
    assert split_csv_arg(" X1, X4 ,") == ["X1", "X4"]


def test_clamp_describe_and_parse():
    natural = Clamp("X3", 1.0, natural=True)
    assert natural.describe() == "X3=natural(1.0)"
    assert Clamp.parse(natural.describe()) == natural
    plain = Clamp("X5", 0.0)
    assert plain.describe() == "X5=0.0"
    assert Clamp.parse("X5=0.0") == plain
    non_natural = Clamp.parse(f"X3=non-natural({math.sqrt(2.0)!r})")
    assert non_natural.natural is False
    assert non_natural.value == math.sqrt(2.0)
    with pytest.raises(ValueError):
        Clamp.parse("X5")


def test_provenance_header():
    assert Provenance().header() == "# provenance: observational"
    both = Provenance((Clamp("X3", 1.0, natural=True), Clamp("X5", 0.0)))
    assert both.header() == "# intervention: X3=natural(1.0), X5=0.0"
    assert Provenance.parse_header([both.header()]) == both
    assert Provenance.parse_header(["# provenance: observational"]).kind == "observational"


def test_dataset_is_read_only():
    ds = Dataset(("X",), np.array([1.0, 2.0]))
    assert ds.values.shape == (2, 1)
    with pytest.raises(ValueError):
        ds.values[0, 0] = 5.0


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(("X", "X"), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Dataset(("X",), np.array([[np.nan]]))
    with pytest.raises(ValueError):
        Dataset(("X", "Y"), np.zeros((2, 3)))


def test_csv_round_trip_keeps_labels_and_provenance(tmp_path):
    provenance = Provenance((Clamp("X3", 1.0, natural=True),))
    ds = Dataset(
        ("C", "X3", "Y"),
        np.array([[0.0, 1.0, 2.5], [1.0, 1.0, -0.5], [0.0, 1.0, 0.25]]),
        provenance,
        {"C": ("female", "male")},
    )
    path = tmp_path / "data.csv"
    write_csv(ds, str(path))
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[0] == "# intervention: X3=natural(1.0)"
    assert "female" in text

    loaded = read_csv(str(path))
    assert loaded.columns == ds.columns
    assert loaded.labels == {"C": ("female", "male")}
    assert loaded.provenance == provenance
    np.testing.assert_array_equal(loaded.values, ds.values)
    assert loaded.label_of("C", 1.0) == "male"


def test_read_csv_factorises_strings(tmp_path):
    path = tmp_path / "groups.csv"
    path.write_text("g,v\nb,1.5\na,2\nb,3\n", encoding="utf-8")
    ds = read_csv(str(path))
    assert ds.labels == {"g": ("a", "b")}
    assert ds.column("g").tolist() == [1.0, 0.0, 1.0]
    assert ds.provenance.kind == "observational"


@pytest.mark.parametrize(
    "body",
    [
        "x,y\n",
        "x,y\n1,\n2,3\n",
    ],
)
def test_read_csv_rejects_bad_files(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(BadCsv):
        read_csv(str(path))


def test_read_csv_missing_file(tmp_path):
    with pytest.raises(BadCsv):
        read_csv(str(tmp_path / "absent.csv"))


def test_select_rows_and_with_column():
    ds = Dataset(("X", "Y"), np.arange(6, dtype=float).reshape(3, 2))
    sub = ds.select_rows([0, 2])
    assert sub.column("Y").tolist() == [1.0, 5.0]
    shifted = ds.with_column("X", np.zeros(3))
    assert shifted.column("X").tolist() == [0.0, 0.0, 0.0]
    assert ds.column("X").tolist() == [0.0, 2.0, 4.0]
