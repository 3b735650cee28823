import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from crystalseg.detect import (
    BaselineConfig,
    Detection,
    DetectionParseError,
    DetectionSet,
    baseline_detect,
    format_detections,
    parse_detections,
)
from crystalseg.raster import BBox, GrayImage, ObjectClass


def test_parse_centre_box():
    dets = parse_detections("0 0.5 0.5 0.5 0.5", 100, 100)
    assert dets.detections == [Detection(ObjectClass.CRYSTAL, BBox(25, 25, 50, 50), 1.0)]


def test_parse_full_image_bubble():
    (d,) = parse_detections("2 0.5 0.5 1.0 1.0 0.9", 64, 64)
    assert d.cls is ObjectClass.AIR_BUBBLE
    assert d.box == BBox(0, 0, 64, 64)
    assert d.confidence == 0.9


def test_parse_bad_class():
    with pytest.raises(DetectionParseError, match="line 1") as info:
        parse_detections("3 0.5 0.5 0.1 0.1", 10, 10)
    assert info.value.line == 1


@pytest.mark.parametrize("text, line", [
    ("# header\n0 0.5 0.5 0.1\n", 2),
    ("0 0.5 0.5 0.1 0.1\n0 0.5 abc 0.1 0.1\n", 2),
    ("0 1.5 0.5 0.1 0.1", 1),
    ("0 0.5 0.5 0.1 0.1 1.2", 1),
    ("x 0.5 0.5 0.1 0.1", 1),
    ("\n\n1 0.5 0.5 -0.1 0.1", 3),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(DetectionParseError) as info:
        parse_detections(text, 50, 50)
    assert info.value.line == line


def test_parse_skips_comments_and_blank_lines():
    dets = parse_detections(["# c", "", "1 0.25 0.25 0.5 0.5 0.3"], 8, 8)
    assert len(dets) == 1
    assert dets.detections[0].box == BBox(0, 0, 4, 4)


def test_parse_clamps_border_boxes():
    (d,) = parse_detections("0 0.95 0.05 0.2 0.2", 100, 100)
    assert d.box == BBox(85, 0, 15, 15)


def test_parse_preserves_order():
    text = "1 0.2 0.2 0.1 0.1\n0 0.8 0.8 0.1 0.1\n2 0.5 0.5 0.1 0.1\n"
    assert [d.cls for d in parse_detections(text, 40, 40)] == [
        ObjectClass.HARD_MIMIC, ObjectClass.CRYSTAL, ObjectClass.AIR_BUBBLE]


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_serialize_parse_roundtrip(data):
    w, h = data.draw(st.integers(1, 2048)), data.draw(st.integers(1, 2048))
    dets = DetectionSet("img")
    for _ in range(data.draw(st.integers(0, 6))):
        x0, y0 = data.draw(st.integers(0, w - 1)), data.draw(st.integers(0, h - 1))
        box = BBox(x0, y0, data.draw(st.integers(1, w - x0)), data.draw(st.integers(1, h - y0)))
        conf = round(data.draw(st.floats(0, 1)), 6)
        dets.detections.append(Detection(ObjectClass(data.draw(st.integers(0, 2))), box, conf))
    back = parse_detections(format_detections(dets, w, h), w, h, "img")
    assert back.detections == dets.detections


def _white(h=100, w=100):
    return np.full((h, w), 255, np.uint8)


def test_baseline_blank_image():
    assert len(baseline_detect(GrayImage(_white()))) == 0


def _component_areas(px, fraction):
    # exhaustive scan: binarize by oracle, label by flood fill, collect areas and extents
    bits = oracles.binarize(px.tolist(), fraction)
    lab = oracles.components(bits)
    found = {}
    for y, row in enumerate(lab):
        for x, v in enumerate(row):
            if v:
                a, x0, y0, x1, y1 = found.get(v, (0, x, y, x, y))
                found[v] = (a + 1, min(x0, x), min(y0, y), max(x1, x), max(y1, y))
    return found


def test_baseline_single_square():
    px = _white()
    px[45:55, 40:50] = 0
    comps = _component_areas(px, 0.3)
    square = [c for c in comps.values() if c[0] == 100]
    assert len(square) == 1
    (d,) = baseline_detect(GrayImage(px)).detections
    assert d.cls is ObjectClass.CRYSTAL and d.confidence == 1.0
    assert d.box.x0 <= 40 and d.box.y0 <= 45 and d.box.x1 >= 50 and d.box.y1 >= 55
    assert d.box == BBox(38, 43, 14, 14)


def test_baseline_confidence_ratio():
    px = _white()
    px[60:70, 20:30] = 0
    px[62:67, 70:75] = 10
    areas = sorted(c[0] for c in _component_areas(px, 0.3).values() if c[0] < 2500)
    assert areas == [25, 100]
    dets = baseline_detect(GrayImage(px))
    assert sorted(d.confidence for d in dets) == [0.25, 1.0]


def test_baseline_area_bounds():
    px = _white()
    px[60:63, 20:23] = 0
    assert len(baseline_detect(GrayImage(px))) == 0
    assert len(baseline_detect(GrayImage(px), BaselineConfig(min_area=5))) == 1


def test_baseline_deterministic_and_translation_equivariant():
    rng = np.random.default_rng(3)
    px = _white(120, 120)
    px[50:58, 40:52] = rng.integers(0, 40, (8, 12))
    px[70:75, 60:64] = 5
    base = baseline_detect(GrayImage(px))
    assert baseline_detect(GrayImage(px)).detections == base.detections
    shifted = np.roll(px, (7, -5), axis=(0, 1))
    moved = baseline_detect(GrayImage(shifted))
    assert [(b.box.x0 - 5, b.box.y0 + 7, b.box.w, b.box.h) for b in base] == \
        [(m.box.x0, m.box.y0, m.box.w, m.box.h) for m in moved]
