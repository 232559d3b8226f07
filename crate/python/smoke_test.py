"""Smoke test for the Python bindings. Run after `maturin develop` or after
installing the wheel built from crates/py."""
import json
import math

import disco

a = disco.BoxCorners(0.0, 0.0, 10.0, 10.0)
b = disco.BoxCorners(5.0, 0.0, 15.0, 10.0)
assert abs(a.iou(b) - 1.0 / 3.0) < 1e-12
assert disco.iou([0, 0, 10, 10], [20, 20, 30, 30]) == 0.0
assert a.to_center_size() == [5.0, 5.0, 10.0, 10.0]
assert a.encode_delta(b) == [0.5, 0.0, 0.0, 0.0]
assert abs(a.apply_delta([0.0, 0.0, math.log(2.0), 0.0]).width() - 20.0) < 1e-9
clipped, valid = disco.BoxCorners(-5, -5, 5, 5).clip_to_image(100, 100)
assert clipped.to_list() == [0.0, 0.0, 5.0, 5.0] and valid

assert disco.perturb_box([50, 50, 10, 10], 0.5, [0.4, 0, 0, 0])[0] == 54.0
noisy = json.loads(disco.perturb_annotations(
    json.dumps([{"image_id": "x", "category": 1, "bbox": [10, 20, 50, 80]}]), 0.4, 7))
assert noisy[0]["real_bbox"] == [10.0, 20.0, 50.0, 80.0]

w = disco.softmax_weights([1.0, 0.0], 0.1)
assert abs(w[0] - 1.0 / (1.0 + math.exp(-10.0))) < 1e-12
mu, sigma = disco.model_distribution([[0, 0, 10, 10], [0, 0, 20, 10]], [0.5, 0.5])
assert mu == [0.0, 0.0, 15.0, 10.0] and sigma[2] == 5.0

assert abs(disco.phi(0.9) - 0.59049) < 1e-12
refined, weight = disco.refine_box([0, 0, 10, 10], 1.0, [0, 0, 20, 10])
assert weight == 0.8 and refined == [0.0, 0.0, 12.0, 10.0]

kept = disco.softer_nms([[0, 0, 20, 10], [8, 0, 20, 10]], [0.9, 0.8], [[1, 1, 1, 1], [4, 1, 1, 1]])
assert len(kept) == 1 and abs(kept[0][0][0] - 1.6) < 1e-12
assert len(disco.standard_nms([[0, 0, 10, 10], [0, 0, 9, 10]], [0.9, 0.8], [[1] * 4] * 2)) == 1
assert disco.evaluate_ap50([([([0, 0, 10, 10], 0.9)], [[0, 0, 10, 10]])]) == 1.0

report = json.loads(disco.run_experiment(json.dumps(
    {"scenes": 4, "estimator": {"steps": 20, "validation_scenes": 1}})))
trial = report["trials"][0]
assert 0.0 <= trial["mean_iou_noisy"] <= 1.0
try:
    disco.run_experiment('{"passes": 9}')
except ValueError:
    pass
else:
    raise AssertionError("invalid config accepted")

print("python smoke test passed")
