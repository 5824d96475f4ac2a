import xml.etree.ElementTree as ET

import numpy as np

from latentplan.plotting import component_weights_svg, trajectory_fan_svg, variance_curve_svg

NS = {"svg": "http://www.w3.org/2000/svg"}


def ids(svg):
    return {el.get("id") for el in ET.fromstring(svg).iter() if el.get("id")}


def test_fan_is_well_formed(tmp_path):
    t = np.linspace(0, 1, 80)[:, None]
    plans = np.stack([np.hstack([40 * t, k * t]) for k in range(5)])
    svg = trajectory_fan_svg(plans, plans[2], [np.zeros((10, 2)) + 1.0], plans[2][[15, 31, 47, 63, 79]],
                             np.zeros((11, 2)), title="a < b", path=tmp_path / "fan.svg")
    root = ET.fromstring(svg)
    assert root.tag == "{http://www.w3.org/2000/svg}svg"
    assert {"map", "plans", "history", "ground-truth", "goal"} <= ids(svg)
    assert len(root.find(".//svg:g[@id='plans']", NS)) == 5
    assert len(root.find(".//svg:g[@id='goal']", NS)) == 5
    assert (tmp_path / "fan.svg").read_text() == svg


def test_fan_degenerate_extent():
    # a single stationary point must not divide by zero
    ET.fromstring(trajectory_fan_svg(np.zeros((1, 80, 2))))


def test_variance_curve_marks_k16():
    rows = [{"k": k, "cum_variance_ratio": 1 - 0.5 ** k} for k in range(1, 21)]
    svg = variance_curve_svg(rows)
    root = ET.fromstring(svg)
    marker = root.find(".//svg:line[@id='k16-marker']", NS)
    assert marker is not None
    assert "k=16: 0.99998" in svg
    curve = root.find(".//svg:polyline[@id='curve']", NS)
    assert len(curve.get("points").split()) == 20


def test_component_weights_bars():
    svg = component_weights_svg(range(1, 7), [0.5, -0.2, 0.0, 1.0, -1.0, 0.1])
    bars = ET.fromstring(svg).find(".//svg:g[@id='bars']", NS)
    assert len(bars) == 6
    heights = [float(b.get("height")) for b in bars]
    assert heights[2] == 0.0 and heights[3] == max(heights) == heights[4]
