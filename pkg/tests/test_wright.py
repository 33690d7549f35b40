import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adqc.errors import ValidationError
from adqc.model import Item
from adqc.pcm import PersonAbility, Thresholds
from adqc.wright import AXIS_MARGIN, AxisTransform, MapOptions, SvgStyle, build_map, render_svg, render_text

from .conftest import GOLDEN


def _th(name, g1, g2, source=None):
    item = Item("v01", source, "equal") if source else name
    return Thresholds(item, (g1, g2))


ABIL = [PersonAbility("H1", 0.3, 0.4), PersonAbility("Q1", -0.6, 0.4)]


class TestBuild:
    def test_sorted_by_upper_threshold(self):
        th = [_th("item1", -1, 0.5), _th("item2", -1, -0.2), _th("item3", -1, 0.1)]
        model = build_map(th, ABIL)
        assert [c.item_id for c in model.item_columns] == ["item2", "item3", "item1"]

    def test_ties_by_id(self):
        th = [_th("b", -1, 0.5), _th("a", -2, 0.5)]
        assert [c.item_id for c in build_map(th, ABIL).item_columns] == ["a", "b"]

    def test_grouped_fixed_order(self):
        th = [Thresholds(Item(f"v0{i}", s, "equal"), (-1.0, 0.1 * i)) for i, s in enumerate(["gpt", "qwen", "human", "gemini"])]
        model = build_map(th, ABIL, MapOptions(grouped=True))
        assert [g[0] for g in model.groups] == ["d1", "d2", "d3", "d4"]
        assert [g[1] for g in model.groups] == ["human", "qwen", "gemini", "gpt"]

    def test_grouped_unknown_source(self):
        th = [Thresholds(Item("v01", "llama", "equal"), (-1.0, 0.0))]
        with pytest.raises(ValidationError, match="llama"):
            build_map(th, ABIL, MapOptions(grouped=True))

    def test_axis_margin_and_cuts(self):
        model = build_map([_th("a", -1.5, 2.0)], ABIL)
        assert model.axis == (-1.5 - AXIS_MARGIN, 2.0 + AXIS_MARGIN)
        assert model.cut_points == (0.3, -0.6)

    def test_histogram_bins(self):
        ab = [PersonAbility(str(i), t, 0.3) for i, t in enumerate((0.1, 0.2, 0.26, -0.1))]
        model = build_map([_th("a", -1, 1)], ab, MapOptions(bin_width=0.25))
        assert model.histogram == ((-0.25, 0.0, 1), (0.0, 0.25, 2), (0.25, 0.5, 1))

    def test_empty_inputs(self):
        with pytest.raises(ValidationError):
            build_map([], ABIL)
        with pytest.raises(ValidationError):
            build_map([_th("a", 0, 1)], [])

    @given(st.lists(st.tuples(st.floats(-3, 0), st.floats(0, 3)), min_size=1, max_size=12))
    def test_sort_idempotent(self, pairs):
        th = [_th(f"i{k:02d}", a, b) for k, (a, b) in enumerate(pairs)]
        cols = build_map(th, ABIL).item_columns
        uppers = [c.upper for c in cols]
        assert uppers == sorted(uppers)
        again = [Thresholds(c.item_id, c.gammas) for c in cols]
        assert build_map(again, ABIL).item_columns == cols


class TestSvg:
    def _model(self):
        th = [_th("a", -1.2, 0.4), _th("b", -0.3, 1.1), _th("c", -2.0, -0.9)]
        return build_map(th, ABIL, MapOptions(title="Equal"))

    def test_deterministic(self):
        assert render_svg(self._model()) == render_svg(self._model())

    def test_glyphs_and_cuts(self):
        svg = render_svg(self._model())
        assert svg.count('class="threshold1"') == 3 and svg.count('class="threshold2"') == 3
        assert svg.count('class="cut"') == 2 and 'stroke-dasharray="3 3"' in svg
        assert "<svg" in svg and "Date" not in svg

    def test_labels_map_back_to_theta(self):
        model = self._model()
        style = SvgStyle()
        tr = AxisTransform(model.axis, style.top, style.plot_height)
        for theta, y in re.findall(r'class="respondent" data-theta="([^"]+)" x="[^"]+" y="([^"]+)"', render_svg(model)):
            assert abs(tr.y(float(theta)) - float(y)) <= 0.5
            assert abs(tr.value(float(y)) - float(theta)) <= 0.5 / style.plot_height * (model.axis[1] - model.axis[0])

    def test_escapes_names(self):
        model = build_map([_th("a<b", -1, 1)], [PersonAbility("R&D", 0.0, 1.0)])
        svg = render_svg(model)
        assert "a&lt;b" in svg and "R&amp;D" in svg


class TestText:
    def _model(self):
        th = [_th("a", -1.2, 0.4), _th("b", -0.3, 1.1), _th("c", -2.0, -0.9)]
        return build_map(th, [PersonAbility("Top", 1.9, 0.3), PersonAbility("Low", -1.5, 0.3)])

    def test_width_floor(self):
        with pytest.raises(ValidationError):
            render_text(self._model(), width=59)

    def test_repeatable(self):
        assert render_text(self._model()) == render_text(self._model())

    def test_top_respondent_above_all_items(self):
        lines = render_text(self._model()).splitlines()
        top_row = next(i for i, line in enumerate(lines) if line.endswith("Top"))
        marker_rows = [i for i, line in enumerate(lines) if "|" in line and ("#" in line.split("|")[1])]
        assert marker_rows and top_row < min(marker_rows)

    def test_threshold_markers(self):
        body = render_text(self._model())
        items = "".join(line.split("|")[1] for line in body.splitlines() if line.count("|") >= 2)
        assert items.count("#") == 3 and items.count("-") == 3


class TestDemoMaps:
    @pytest.mark.parametrize("name", ["accurate.svg", "accurate_grouped.svg", "accurate.txt"])
    def test_golden(self, demo_run, name):
        cfg, _ = demo_run
        got = (cfg.out / "maps" / name).read_text(encoding="utf-8")
        assert got == (GOLDEN / f"map_{name}").read_text(encoding="utf-8")

    def test_fourteen_svgs(self, demo_run):
        cfg, _ = demo_run
        assert len(list((cfg.out / "maps").glob("*.svg"))) == 14

    def test_cut_line_placement(self, demo_run):
        """Easier items (threshold 2 below a respondent) sit below that cut line, harder ones above."""
        cfg, _ = demo_run
        for svg_path in (cfg.out / "maps").glob("*.svg"):
            svg = svg_path.read_text(encoding="utf-8")
            cuts = [float(y) for y in re.findall(r'class="cut" x1="[^"]+" y1="([^"]+)"', svg)]
            thetas = [float(t) for t in re.findall(r'data-theta="([^"]+)"', svg)]
            uppers = [float(y) for y in re.findall(r'class="threshold2" data-item="[^"]+" cx="[^"]+" cy="([^"]+)"', svg)]
            assert len(cuts) == len(thetas) == 12 and uppers
            m = re.search(r"<desc>axis \S+ \S+; y = (\S+) \+ \((\S+) - logit\) / (\S+) \* (\S+)</desc>", svg)
            top, hi, rng, height = map(float, m.groups())
            for theta, cut_y in zip(thetas, cuts):
                for y in uppers:
                    gamma = hi - (y - top) / height * rng
                    if gamma < theta - 0.01:
                        assert y > cut_y
                    elif gamma > theta + 0.01:
                        assert y < cut_y

    def test_order_non_decreasing(self, demo_run):
        import json

        cfg, _ = demo_run
        for fit_path in (cfg.out / "fits").glob("*.json"):
            fit = json.loads(fit_path.read_text())
            svg = (cfg.out / "maps" / (fit_path.stem + ".svg")).read_text()
            order = re.findall(r'class="threshold2" data-item="([^"]+)"', svg)
            upper = {e["item"].rsplit(":", 1)[0]: e["gammas"][-1] for e in fit["items"]}
            values = [upper[i] for i in order]
            assert values == sorted(values)
