import csv
import io
import json

import numpy as np

from diracip.reports import Plot, Series, loglog_svg, rows_to_csv, summary_json


def test_csv_carries_hash_on_every_row():
    rows = [{"n": 9, "err": 0.1, "ok": True}, {"n": 17, "err": 0.025, "ok": np.False_}]
    text = rows_to_csv(rows, ["n", "err", "ok"], "abc123")
    table = list(csv.reader(io.StringIO(text)))
    assert table[0] == ["n", "err", "ok", "config_hash"]
    assert table[1] == ["9", "0.1", "true", "abc123"] and table[2][-1] == "abc123"
    assert repr(0.025) in text


def test_summary_json_is_sorted_and_plain():
    doc = summary_json("x", "h", [{"b": np.float64(1.5), "a": np.int64(2), "c": 1 + 2j}], np.True_,
                       checks=[{"name": "k", "value": float("nan")}], extra={"seed": 0})
    d = json.loads(doc)
    assert list(d) == sorted(d)
    assert d["pass"] is True and d["rows"][0] == {"a": 2, "b": 1.5, "c": [1.0, 2.0]}
    assert d["checks"][0]["value"] == "nan" and d["seed"] == 0
    assert summary_json("x", "h", [], False) == summary_json("x", "h", [], False)


def test_svg_reports_fitted_slope():
    x = np.array([0.5, 0.25, 0.125])
    svg = loglog_svg(Plot("p", "a <title>", [Series("err", x, 3 * x**2), Series("flat", x, x * 0 + 1, fit=False)]))
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "slope 2.000" in svg and "a &lt;title&gt;" in svg
    assert svg == loglog_svg(Plot("p", "a <title>", [Series("err", x, 3 * x**2), Series("flat", x, x * 0 + 1, fit=False)]))
    assert "2026" in loglog_svg(Plot("p", "t", [Series("e", x, x)]), timestamp="2026-01-01T00:00:00")


def test_svg_handles_empty_series():
    svg = loglog_svg(Plot("p", "t", [Series("e", np.array([0.5]), np.array([np.nan]))]))
    # only the legend marker is drawn and no fit line
    assert svg.count("<circle") == 1 and "slope" not in svg
