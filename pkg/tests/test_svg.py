import xml.etree.ElementTree as ET

import numpy as np

from dpdbp.svg import Plot

NS = "{http://www.w3.org/2000/svg}"


def sample_plot():
    x = np.linspace(0, 0.6, 13)
    plot = Plot("title <a&b>", "eps", "beta0")
    plot.add("alpha=0.5", x, 35 + x, lower=34 + x, upper=36 + x)
    plot.add("alpha=1", x, np.where(x > 0.3, np.nan, 35 - x), dashed=True)
    return plot


class TestRender:
    def test_deterministic(self):
        assert sample_plot().render() == sample_plot().render()

    def test_well_formed(self):
        root = ET.fromstring(sample_plot().render())
        assert root.tag == NS + "svg"
        assert len(root.findall(NS + "polyline")) == 2
        assert len(root.findall(NS + "polygon")) == 1
        assert any(t.text == "title <a&b>" for t in root.iter(NS + "text"))

    def test_non_finite_points_dropped(self):
        root = ET.fromstring(sample_plot().render())
        second = root.findall(NS + "polyline")[1]
        assert len(second.get("points").split()) == 7
        assert "nan" not in sample_plot().render()

    def test_ylim_clips(self):
        plot = Plot("t", "x", "y", ylim=(0, 1))
        plot.add("s", [0, 1], [-5, 5])
        pts = ET.fromstring(plot.render()).find(NS + "polyline").get("points").split()
        ys = [float(p.split(",")[1]) for p in pts]
        assert min(ys) >= 40 and max(ys) <= 420 - 55

    def test_empty_and_constant(self):
        ET.fromstring(Plot("t", "x", "y").render())
        plot = Plot("t", "x", "y")
        plot.add("c", [0.5], [1.0])
        ET.fromstring(plot.render())

    def test_save(self, tmp_path):
        sample_plot().save(tmp_path / "a.svg")
        assert (tmp_path / "a.svg").read_text() == sample_plot().render()
