import math

import numpy as np
import pytest

from flowseg.core import ClassSpace, FlowField, LabelMap


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_label_map(rng, h, w, k, ignore_prob=0.1) -> LabelMap:
    space = ClassSpace(k)
    data = rng.integers(0, k, size=(h, w)).astype(np.uint8)
    if ignore_prob > 0:
        data = np.where(rng.random((h, w)) < ignore_prob, np.uint8(255), data)
    return LabelMap(data, space)


def random_flow(rng, h, w, lo=-3.0, hi=3.0, integer=False) -> FlowField:
    if integer:
        dx = rng.integers(int(lo), int(hi) + 1, size=(h, w)).astype(np.float32)
        dy = rng.integers(int(lo), int(hi) + 1, size=(h, w)).astype(np.float32)
    else:
        dx = rng.uniform(lo, hi, size=(h, w)).astype(np.float32)
        dy = rng.uniform(lo, hi, size=(h, w)).astype(np.float32)
    return FlowField(dx, dy)


def round_half_away(x: float) -> int:
    """Independent reference for the package's rounding rule."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def naive_propagate_labels(labels: LabelMap, flow: FlowField):
    """Brute-force per-pixel gather; the oracle for every warp test."""
    h, w = labels.shape
    out = np.full((h, w), 255, dtype=np.uint8)
    valid = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            ry = round_half_away(i + float(flow.dy[i, j]))
            rx = round_half_away(j + float(flow.dx[i, j]))
            if 0 <= ry < h and 0 <= rx < w:
                out[i, j] = labels.data[ry, rx]
                valid[i, j] = True
    return out, valid
