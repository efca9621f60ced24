"""Grad-CAM attribution for the classifier plus overlay rendering.

The class activation map is built from the 16x16x16 activations feeding the
global average pool: channel weights are the spatial means of the target
logit's gradient with respect to those activations, the weighted sum is
rectified, normalized by its own maximum (an all-zero map stays all zero),
and bilinearly upsampled to the 64x64 input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imaging, tensor
from .classify import ClassifierModel, classifier_input
from .detect import BBox
from .errors import InvalidArgument, StateError
from .imaging import Heatmap, ImageU8


@dataclass
class CamResult:
    """Raw rectified map, the normalized upsampled heatmap, and provenance."""

    raw: np.ndarray
    heatmap: Heatmap
    target_class: str
    model_id: str


def _gap_index(network: tensor.Network) -> int:
    for i, layer in enumerate(network.layers):
        if isinstance(layer, tensor.GlobalAvgPoolLayer):
            return i
    raise StateError(f"network {network.name!r} has no global average pool")


def grad_cam(img: ImageU8, model: ClassifierModel, target_class: str) -> CamResult:
    """Class activation map for one image and one of the model's classes."""
    if target_class not in model.class_labels:
        raise InvalidArgument(
            f"{target_class!r} is not a class of model {model.model_id!r}")
    target = model.class_labels.index(target_class)

    x = classifier_input(img)
    logits, cache = tensor.network_forward(model.network, x)
    dout = np.zeros_like(logits)
    dout[target] = 1.0
    back = tensor.network_backward(model.network, cache, dout)

    gap = _gap_index(model.network)
    acts = cache.entries[gap]["x"]
    grads = back.layer_input_grads[gap]

    weights = grads.mean(axis=(1, 2))
    raw = np.zeros(acts.shape[1:], dtype=np.float64)
    for k in range(acts.shape[0]):
        raw += weights[k] * acts[k]
    raw = np.maximum(raw, 0.0)

    peak = float(raw.max())
    normed = raw / peak if peak > 0.0 else np.zeros_like(raw)
    up = imaging.resize_bilinear_f64(normed, 64, 64)
    up = np.clip(up, 0.0, 1.0)
    return CamResult(raw, Heatmap(up), target_class, model.model_id)


def cam_overlay(img: ImageU8, cam: CamResult, alpha: float = 0.4) -> ImageU8:
    """Colormapped heatmap blended at constant alpha over the image, which
    is resized to the heatmap's dimensions first if they differ."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha {alpha} outside [0, 1]")
    h, w = cam.heatmap.values.shape
    base = imaging.resize_bilinear(img, h, w)
    colored = imaging.colormap(cam.heatmap)
    mixed = alpha * colored.pixels.astype(np.float64) \
        + (1.0 - alpha) * base.pixels.astype(np.float64)
    return ImageU8(imaging.round_half_up_u8(mixed))


def segmentation_overlay(img: ImageU8, mask: np.ndarray, color=(255, 0, 0),
                         alpha: float = 0.4) -> ImageU8:
    """Solid color blended over the image wherever the binary mask is set."""
    return imaging.alpha_blend(img, color, np.asarray(mask, dtype=np.float64), alpha)


def cam_compare(img: ImageU8, models: list[ClassifierModel],
                target_class: str) -> list[CamResult]:
    """One CAM per model for a target label every model must share."""
    if not models:
        raise InvalidArgument("cam_compare needs at least one model")
    for m in models:
        if target_class not in m.class_labels:
            raise InvalidArgument(
                f"model {m.model_id!r} has no class {target_class!r}")
    return [grad_cam(img, m, target_class) for m in models]


def full_image_cam(img: ImageU8, model: ClassifierModel, boxes: list[BBox],
                   target_class: str) -> Heatmap:
    """Heatmap at the image's own resolution.

    With boxes, each box crop is explained separately and its heatmap is
    pasted back (elementwise max where boxes overlap); the rest of the image
    stays cold. Without boxes the whole-image CAM is stretched to full size.
    """
    canvas = np.zeros((img.height, img.width), dtype=np.float64)
    if boxes:
        for box in boxes:
            x0, y0, x1, y1 = imaging.clamp_box(box, img.width, img.height)
            if x1 <= x0 or y1 <= y0:
                continue
            crop = imaging.resize_bilinear(
                imaging.crop(img, (x0, y0, x1, y1)), 64, 64)
            cam = grad_cam(crop, model, target_class)
            patch = imaging.resize_bilinear_f64(
                cam.heatmap.values, y1 - y0, x1 - x0)
            region = canvas[y0:y1, x0:x1]
            np.maximum(region, np.clip(patch, 0.0, 1.0), out=region)
    else:
        cam = grad_cam(img, model, target_class)
        canvas = np.clip(
            imaging.resize_bilinear_f64(cam.heatmap.values, img.height, img.width),
            0.0, 1.0)
    return Heatmap(canvas)
