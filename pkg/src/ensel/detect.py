"""Lesion localization: objectness CNN, thresholding, connected components,
box math, and the box-regression loss.

The detector is one frozen architecture: 128x128x3 input, two 3x3 conv+relu
stages each followed by 2x2 max pooling, and a 1x1 sigmoid head producing a
32x32 objectness map (stride 4 relative to the resized input). Boxes are
half-open pixel rectangles in original image coordinates.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import imaging, tensor
from .errors import InvalidArgument
from .imaging import ImageU8
from .rng import Rng

DETECTOR_ARCH = "tiny-detector-v1"
DETECTOR_INPUT = (3, 128, 128)
DETECTOR_MAP_SIZE = 32
DETECTOR_STRIDE = 4

DEFAULT_THRESHOLD = 0.5
DEFAULT_MIN_AREA = 16


@dataclass
class BBox:
    """Half-open pixel rectangle [x0, x1) x [y0, y1) with a confidence score."""

    x0: int
    y0: int
    x1: int
    y1: int
    score: float = 1.0
    label: str | None = None

    def __post_init__(self):
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise InvalidArgument(f"degenerate box ({self.x0},{self.y0},{self.x1},{self.y1})")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidArgument(f"box score {self.score} outside [0, 1]")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass
class ObjectnessMap:
    """Per-cell lesion probability at a fixed stride over the resized input."""

    values: np.ndarray
    stride: int = DETECTOR_STRIDE

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidArgument(f"objectness map must be 2-d, got shape {v.shape}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise InvalidArgument("objectness values must lie in [0, 1]")
        self.values = v

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


def build_detector_network(rng: Rng | None = None) -> tensor.Network:
    """Frozen detector graph. With an rng, conv kernels get He-uniform
    values in parameter order and biases start at zero; without one,
    everything is zeros."""

    def init(shape, fan_in):
        if rng is None:
            return np.zeros(shape, dtype=np.float64)
        return tensor.he_uniform(rng, shape, fan_in)

    def zeros(shape):
        return np.zeros(shape, dtype=np.float64)

    layers = [
        tensor.ConvLayer("conv1", init((8, 3, 3, 3), 27), zeros((8,)),
                         stride=1, pad=1, activation="relu"),
        tensor.MaxPool2Layer("pool1"),
        tensor.ConvLayer("conv2", init((8, 8, 3, 3), 72), zeros((8,)),
                         stride=1, pad=1, activation="relu"),
        tensor.MaxPool2Layer("pool2"),
        tensor.ConvLayer("head", init((1, 8, 1, 1), 8), zeros((1,)),
                         stride=1, pad=0, activation="sigmoid"),
    ]
    return tensor.Network(DETECTOR_ARCH, DETECTOR_INPUT, layers)


@dataclass
class DetectorModel:
    """Objectness network plus registry metadata."""

    network: tensor.Network
    metadata: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, seed: int, model_id: str = "detector",
                   created_at: str = "") -> "DetectorModel":
        net = build_detector_network(Rng(seed))
        return cls(net, {"id": model_id, "created_at": created_at, "seed": seed})

    @property
    def model_id(self) -> str:
        return self.metadata.get("id", "detector")


def detector_input(img: ImageU8) -> np.ndarray:
    """Resize to the detector's input and normalize to [0, 1], channels first."""
    resized = imaging.resize_bilinear(img, DETECTOR_INPUT[1], DETECTOR_INPUT[2])
    return resized.pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def objectness(img: ImageU8, model: DetectorModel) -> ObjectnessMap:
    """Objectness map for an image of any size."""
    out, _ = tensor.network_forward(model.network, detector_input(img))
    return ObjectnessMap(out[0], stride=DETECTOR_STRIDE)


def connected_components(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """8-connected components of a binary map.

    Components are ordered by their first pixel in row-major scan order, and
    each pixel list is itself row-major sorted.
    """
    m = np.asarray(mask).astype(bool)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidArgument(f"mask must be a nonempty 2-d map, got shape {m.shape}")
    h, w = m.shape
    seen = np.zeros((h, w), dtype=bool)
    components: list[list[tuple[int, int]]] = []
    for i in range(h):
        for j in range(w):
            if not m[i, j] or seen[i, j]:
                continue
            pixels = []
            queue = deque([(i, j)])
            seen[i, j] = True
            while queue:
                y, x = queue.popleft()
                pixels.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and m[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            pixels.sort()
            components.append(pixels)
    return components


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def boxes_from_objectness(omap: ObjectnessMap, orig_w: int, orig_h: int,
                          threshold: float = DEFAULT_THRESHOLD,
                          min_area_px: int = DEFAULT_MIN_AREA) -> list[BBox]:
    """Threshold the map, extract 8-connected blobs, and return their tight
    boxes mapped back to original pixel coordinates.

    Cells count as positive at `value >= threshold`. Scores are the mean
    objectness over the blob's cells; boxes are sorted by score descending,
    ties by (y0, x0).
    """
    if not 0.0 < threshold < 1.0:
        raise InvalidArgument(f"threshold {threshold} outside (0, 1)")
    stride = omap.stride
    resized_h = omap.h * stride
    resized_w = omap.w * stride
    sx = orig_w / resized_w
    sy = orig_h / resized_h
    boxes = []
    for comp in connected_components(omap.values >= threshold):
        ys = [p[0] for p in comp]
        xs = [p[1] for p in comp]
        rx0, rx1 = min(xs) * stride, (max(xs) + 1) * stride
        ry0, ry1 = min(ys) * stride, (max(ys) + 1) * stride
        x0 = max(0, min(_round_half_up(rx0 * sx), orig_w - 1))
        y0 = max(0, min(_round_half_up(ry0 * sy), orig_h - 1))
        x1 = min(max(_round_half_up(rx1 * sx), x0 + 1), orig_w)
        y1 = min(max(_round_half_up(ry1 * sy), y0 + 1), orig_h)
        if (x1 - x0) * (y1 - y0) < min_area_px:
            continue
        score = float(np.mean([omap.values[p] for p in comp]))
        boxes.append(BBox(x0, y0, x1, y1, score=score))
    boxes.sort(key=lambda b: (-b.score, b.y0, b.x0))
    return boxes


def lesion_mask(omap: ObjectnessMap, orig_w: int, orig_h: int,
                threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Thresholded objectness upsampled (nearest) to original image size."""
    ys = (np.arange(orig_h, dtype=np.int64) * omap.h) // orig_h
    xs = (np.arange(orig_w, dtype=np.int64) * omap.w) // orig_w
    binary = omap.values >= threshold
    return binary[np.minimum(ys, omap.h - 1)][:, np.minimum(xs, omap.w - 1)]


def detect_lesions(img: ImageU8, model: DetectorModel,
                   threshold: float = DEFAULT_THRESHOLD,
                   min_area_px: int = DEFAULT_MIN_AREA) -> list[BBox]:
    """Locate lesions in an image; an empty list means none were found."""
    omap = objectness(img, model)
    return boxes_from_objectness(omap, img.width, img.height, threshold, min_area_px)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(iw, 0) * max(ih, 0)
    union = a.area + b.area - inter
    return inter / union


SMOOTH_L1_DELTA = 0.1


def box_regression_loss(pred: BBox, gt: BBox, image_w: int, image_h: int,
                        delta: float = SMOOTH_L1_DELTA) -> float:
    """Smooth-L1 penalty on box coordinates, normalized by image size.

    Per coordinate x: 0.5*x^2/delta if |x| < delta, else |x| - 0.5*delta;
    the result is the mean over the four coordinates.
    """
    diffs = (
        (pred.x0 - gt.x0) / image_w,
        (pred.y0 - gt.y0) / image_h,
        (pred.x1 - gt.x1) / image_w,
        (pred.y1 - gt.y1) / image_h,
    )
    total = 0.0
    for d in diffs:
        a = abs(d)
        total += 0.5 * d * d / delta if a < delta else a - 0.5 * delta
    return total / 4.0


def rescale_crop(img: ImageU8, box: BBox, target_h: int = 64, target_w: int = 64) -> ImageU8:
    """Crop a box and resize it to the classifier input size."""
    return imaging.resize_bilinear(imaging.crop(img, box), target_h, target_w)
