"""Independent scalar oracles for the acceptance suite.

Run with `python3 oracles.py > oracles.json`. Uses only plain arithmetic and
numpy for the Monte-Carlo baseline.
"""
import json
import math

import numpy as np


def iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def noisy_iou_mean(level, samples, seed):
    # IoU of a unit box with its perturbation; invariant to box size and position.
    rng = np.random.default_rng(seed)
    d = rng.uniform(-level, level, size=(samples, 4))
    w, h = 1.0 + d[:, 2], 1.0 + d[:, 3]
    ix = np.clip(np.minimum(0.5, d[:, 0] + w / 2) - np.maximum(-0.5, d[:, 0] - w / 2), 0, None)
    iy = np.clip(np.minimum(0.5, d[:, 1] + h / 2) - np.maximum(-0.5, d[:, 1] - h / 2), 0, None)
    inter = ix * iy
    v = inter / (1.0 + w * h - inter)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(samples))


e10 = math.exp(-10.0)
ln2 = math.log(2.0)
out = {
    "iou_half_shift": iou((0, 0, 10, 10), (5, 0, 15, 10)),
    "center_size": [5.0, 10.0, 10.0, 20.0],
    "apply_delta_w": 10.0 * math.exp(ln2),
    "encode_shift": [5.0 / 10.0, 0.0, math.log(10 / 10), math.log(10 / 10)],
    "encode_widen": [(10.0 - 5.0) / 10.0, 0.0, math.log(20 / 10), 0.0],
    "clip": [max(-5.0, 0.0), max(-5.0, 0.0), min(5.0, 100.0), min(5.0, 100.0)],
    "perturb_cx": 50.0 + 0.4 * 10.0,
    "noise_mean_tolerance": 3.0 * 0.4 / math.sqrt(3.0 * 1e5),
    "score_power": 0.5 ** 2,
    "regress_cx": 0.0 + 0.5 * (10.0 - 0.0),
    "softmax_pair": [1.0 / (1.0 + e10), e10 / (1.0 + e10)],
    "weighted_mean": [0.75 * 0 + 0.25 * 0, 0.0, 0.75 * 10 + 0.25 * 20, 10.0],
    "weighted_std_x1": math.sqrt(0.5 * (0 - 5) ** 2 + 0.5 * (10 - 5) ** 2),
    "phi": 0.9 ** 5,
    "fuse_phi_08": [0.0, 0.0, 0.8 * 10 + 0.2 * 20, 10.0],
    "smooth_l1_half": 0.5 * 0.5 ** 2,
    "aug_loss_single": -math.log(math.exp(-1.0)),
    "aug_loss_pair": (-math.log(1.0) - math.log(math.exp(-2.0))) / 2,
    "est_loss_ones": 4 * 1.0,
    "softer_x1": (0 / 1 + 8 / 4) / (1 / 1 + 1 / 4),
    "nms_pair_iou": iou((0, 0, 10, 10), (0, 0, 9, 10)),
    "assign_ious": [iou((0, 0, 6, 10), (0, 0, 10, 10)), iou((0, 0, 6, 10), (0, 0, 6, 2))],
    "cls_loss_pair": (-math.log(1.0) - math.log(math.exp(-1.0))) / 2,
    "total_loss_ones": 1 + 1 + 0.3 * 1 + 0.1 * 1,
    "noisy_iou_baseline": {},
}
for i, level in enumerate((0.1, 0.2, 0.3, 0.4)):
    m, se = noisy_iou_mean(level, 4_000_000, 20240 + i)
    out["noisy_iou_baseline"][f"{level}"] = {"mean": m, "se": se}
print(json.dumps(out, indent=2))
