import xml.etree.ElementTree as ET

import numpy as np
import pytest
from matplotlib.colors import to_hex

from sparsekt.report import RAMP, RAMP_HIGH, RAMP_LOW, export_heatmap, plot_sweep

SVG = "{http://www.w3.org/2000/svg}"


def _ids(path):
    root = ET.parse(path).getroot()
    return root, {el.get("id") for el in root.iter() if el.get("id")}


def test_heatmap_cells_and_labels(tmp_path):
    m = np.random.default_rng(0).random((6, 6))
    m[0, 0], m[5, 5] = 0.0, 1.0
    labels = [3, 8, 11, 20, 21, 40]
    path = export_heatmap(m, labels, tmp_path / "h.svg", title="topk k=7")
    root, ids = _ids(path)
    assert root.tag == SVG + "svg"
    assert sum(i.startswith("cell-") for i in ids) == 36
    assert sum(i.startswith(("xlabel-", "ylabel-")) for i in ids) == 12
    text = path.read_text()
    assert f"{m[2, 3]:.2f}" in text
    for lab in labels:
        assert f">{lab}<" in text


def test_heatmap_ramp_endpoints():
    assert to_hex(RAMP(0.0)) == RAMP_LOW
    assert to_hex(RAMP(1.0)) == RAMP_HIGH


def test_heatmap_single_cell(tmp_path):
    path = export_heatmap([[0.0]], [5], tmp_path / "one.svg")
    _, ids = _ids(path)
    assert "cell-0-0" in ids and "xlabel-0" in ids and "ylabel-0" in ids


def test_heatmap_is_reproducible(tmp_path):
    m = np.eye(3)
    a = export_heatmap(m, [1, 2, 3], tmp_path / "a.svg").read_bytes()
    b = export_heatmap(m, [1, 2, 3], tmp_path / "b.svg").read_bytes()
    assert a == b


@pytest.mark.parametrize("m, labels", [([[1.5]], [0]), ([[0.1, 0.2]], [0]), ([[0.1]], [0, 1])])
def test_heatmap_rejects_bad_input(tmp_path, m, labels):
    with pytest.raises(ValueError):
        export_heatmap(m, labels, tmp_path / "x.svg")


def test_sweep_plot(tmp_path):
    path = plot_sweep({"topk": {1: 0.6, 2: 0.65, 3: 0.66}, "soft": {0.5: 0.64}}, tmp_path / "s.svg")
    root, _ = _ids(path)
    assert root.tag == SVG + "svg"
    assert "validation AUC" in path.read_text()
