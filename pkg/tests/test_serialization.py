"""CSV y JSON de salida: dobles completos y archivos estables."""

import math

import numpy as np

from app.enums.verdict import Verdict
from app.services.serialization import format_value, read_csv, read_json, write_csv, write_json


def test_formato_de_valores():
    assert format_value(True) == "true"
    assert format_value(np.int64(7)) == "7"
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value("fitted") == "fitted"


def test_csv_conserva_los_dobles(tmp_path):
    values = [math.pi, 1.0 / 3.0, 2.0 ** -40, -1e300]
    path = write_csv(tmp_path / "sub" / "tabla.csv", ["k", "x", "ok"], [(i, v, i % 2 == 0) for i, v in enumerate(values)])
    header, rows = read_csv(path)
    assert header == ["k", "x", "ok"]
    assert [row[1] for row in rows] == values
    assert [row[2] for row in rows] == [True, False, True, False]


def test_csv_vacio_tiene_encabezado(tmp_path):
    path = write_csv(tmp_path / "vacio.csv", ["re", "im"], [])
    assert path.read_text(encoding="utf-8") == "re,im\n"


def test_json_ordenado_y_estable(tmp_path):
    data = {
        "z": np.float64(1.5),
        "a": [np.int32(2), complex(1.0, -2.0)],
        "verdict": Verdict.NON_RADIAL,
        "nan": float("nan"),
        "arr": np.array([1.0, 2.0]),
    }
    first = write_json(tmp_path / "a.json", data).read_text(encoding="utf-8")
    second = write_json(tmp_path / "b.json", data).read_text(encoding="utf-8")
    assert first == second
    assert first.index('"a"') < first.index('"z"')
    loaded = read_json(tmp_path / "a.json")
    assert loaded["a"] == [2, {"im": -2.0, "re": 1.0}]
    assert loaded["verdict"] == "NON-RADIAL"
    assert loaded["nan"] is None
    assert loaded["arr"] == [1.0, 2.0]
