"""Synthetic dermatology-style data, dataset IO, and SGD training loops for
the classifier and the detector.

Samples are 96x96 skin-toned backgrounds with per-pixel noise; lesioned
classes draw one elliptical lesion with a class-specific texture and carry a
tight ground-truth box. Every sample is generated from its own forked RNG
stream, so datasets are bit-reproducible and insensitive to generation order.

Training is plain SGD with early stopping on validation loss. The returned
model carries the weights of the best validation epoch, not the last one.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import imaging, tensor
from .classify import ClassifierModel, build_classifier_network, classifier_input
from .detect import (
    DETECTOR_MAP_SIZE,
    DETECTOR_STRIDE,
    BBox,
    DetectorModel,
    build_detector_network,
    detector_input,
)
from .errors import InvalidArgument, NumericError, TrainingError
from .imaging import ImageU8
from .rng import Rng

SYNTH_CLASSES = ("atopic-like", "healthy", "nevus-like", "psoriasis-like")

_BASE_TONE = (210, 170, 150)
_ATOPIC_TONE = (172, 64, 56)
_PSORIASIS_TONE = (214, 126, 108)
_PSORIASIS_DOT = (238, 228, 218)
_NEVUS_TONE = (60, 42, 38)


@dataclass
class SyntheticSpec:
    """Knobs for the generator. `noise` is the half-width of the uniform
    per-pixel background noise; lesion axes span [min_axis, max_axis] pixels."""

    height: int = 96
    width: int = 96
    per_class: int = 25
    noise: int = 20
    min_axis: int = 10
    max_axis: int = 30
    classes: tuple[str, ...] = SYNTH_CLASSES

    def __post_init__(self):
        if self.height < 48 or self.width < 48:
            raise InvalidArgument("images smaller than 48x48 cannot hold a lesion")
        if self.per_class < 1:
            raise InvalidArgument("per_class must be positive")
        if not 0 <= self.noise <= 60:
            raise InvalidArgument("noise half-width must lie in [0, 60]")
        if not 2 <= self.min_axis <= self.max_axis:
            raise InvalidArgument("need 2 <= min_axis <= max_axis")
        if self.max_axis >= min(self.height, self.width) - 2:
            raise InvalidArgument("max_axis too large for the image size")


@dataclass
class LabeledSample:
    image: ImageU8
    label: str
    box: BBox | None = None


def _background(spec: SyntheticSpec, rng: Rng) -> np.ndarray:
    base = np.empty((spec.height, spec.width, 3), dtype=np.float64)
    base[:, :] = _BASE_TONE
    if spec.noise > 0:
        noise = rng.int_array(spec.height * spec.width * 3, -spec.noise, spec.noise)
        base += noise.reshape(spec.height, spec.width, 3)
    return base


def _ellipse_mask(h: int, w: int, cx: int, cy: int, sx: int, sy: int) -> np.ndarray:
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    return ((xs - cx) / sx) ** 2 + ((ys - cy) / sy) ** 2 <= 1.0


def _make_sample(spec: SyntheticSpec, label: str, rng: Rng) -> LabeledSample:
    px = _background(spec, rng)
    if label == "healthy":
        return LabeledSample(ImageU8(np.clip(px, 0, 255).astype(np.uint8)), label, None)

    half_lo = spec.min_axis // 2
    half_hi = spec.max_axis // 2
    sx = rng.randint(half_lo, half_hi)
    sy = sx if label == "nevus-like" else rng.randint(half_lo, half_hi)
    cx = rng.randint(sx, spec.width - 1 - sx)
    cy = rng.randint(sy, spec.height - 1 - sy)
    mask = _ellipse_mask(spec.height, spec.width, cx, cy, sx, sy)

    lesion = np.empty_like(px)
    if label == "atopic-like":
        lesion[:, :] = _ATOPIC_TONE
        speckle = rng.int_array(spec.height * spec.width * 3, -45, 45)
        lesion += speckle.reshape(spec.height, spec.width, 3)
    elif label == "psoriasis-like":
        lesion[:, :] = _PSORIASIS_TONE
        smooth = rng.int_array(spec.height * spec.width * 3, -8, 8)
        lesion += smooth.reshape(spec.height, spec.width, 3)
    elif label == "nevus-like":
        lesion[:, :] = _NEVUS_TONE
        grain = rng.int_array(spec.height * spec.width * 3, -6, 6)
        lesion += grain.reshape(spec.height, spec.width, 3)
    else:
        raise InvalidArgument(f"unknown class {label!r}")

    px = np.where(mask[:, :, None], lesion, px)

    if label == "psoriasis-like":
        # A few lighter scale dots, clipped to the lesion.
        for _ in range(rng.randint(6, 12)):
            ox = cx + rng.randint(-(sx - 1), sx - 1) if sx > 1 else cx
            oy = cy + rng.randint(-(sy - 1), sy - 1) if sy > 1 else cy
            r = rng.randint(1, 2)
            dot = _ellipse_mask(spec.height, spec.width, ox, oy, r, r) & mask
            dot_px = np.empty_like(px)
            dot_px[:, :] = _PSORIASIS_DOT
            px = np.where(dot[:, :, None], dot_px, px)

    img = ImageU8(np.clip(px, 0, 255).astype(np.uint8))
    box = BBox(cx - sx, cy - sy, cx + sx + 1, cy + sy + 1)
    return LabeledSample(img, label, box)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> list[LabeledSample]:
    """Class-balanced synthetic dataset, grouped by class in sorted label
    order. Sample i uses the fork-i stream of the master seed."""
    master = Rng(seed)
    samples = []
    index = 0
    for label in spec.classes:
        for _ in range(spec.per_class):
            samples.append(_make_sample(spec, label, master.fork(index)))
            index += 1
    return samples


# --- dataset files ----------------------------------------------------------


def save_dataset(samples: list[LabeledSample], directory: str) -> None:
    """One PPM per sample plus a manifest with labels and boxes."""
    os.makedirs(directory, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        fname = f"sample_{i:04d}.ppm"
        with open(os.path.join(directory, fname), "wb") as fh:
            fh.write(imaging.encode(s.image, "ppm"))
        rows.append({
            "file": fname,
            "label": s.label,
            "box": list(s.box.as_tuple()) if s.box is not None else None,
        })
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump({"samples": rows}, fh, indent=2)
        fh.write("\n")


def load_dataset(directory: str) -> list[LabeledSample]:
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    samples = []
    for row in manifest["samples"]:
        with open(os.path.join(directory, row["file"]), "rb") as fh:
            img = imaging.decode(fh.read(), "ppm")
        box = BBox(*row["box"]) if row.get("box") else None
        samples.append(LabeledSample(img, row["label"], box))
    return samples


def split_dataset(samples: list[LabeledSample], ratios: tuple[float, float, float],
                  seed: int) -> tuple[list, list, list]:
    """Shuffle, then cut into train/val/test with floor-sized first two parts."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise InvalidArgument("ratios must be three nonnegative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidArgument(f"ratios sum to {sum(ratios)!r}, not 1")
    if not samples:
        raise InvalidArgument("cannot split an empty dataset")
    order = list(range(len(samples)))
    Rng(seed).shuffle(order)
    shuffled = [samples[i] for i in order]
    n = len(samples)
    # The tiny epsilon keeps products like 0.29 * 100 from flooring to 28.
    n_train = int(np.floor(n * ratios[0] + 1e-9))
    n_val = int(np.floor(n * ratios[1] + 1e-9))
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


# --- curves and stopping ----------------------------------------------------


@dataclass
class LossCurve:
    """Per-epoch mean train and validation losses, index 0 = epoch 1."""

    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for i, (tr, va) in enumerate(zip(self.train, self.val), start=1):
                fh.write(f"{i},{tr!r},{va!r}\n")


@dataclass
class EarlyStopResult:
    best_epoch: int
    stop_epoch: int


def early_stopping(val_losses: list[float], patience: int) -> EarlyStopResult:
    """Post-hoc early-stopping read of a validation curve (1-based epochs).

    best_epoch is the first epoch attaining the minimum loss; stop_epoch is
    the first epoch at least `patience` past it, or the last epoch if the
    window never closes.
    """
    if not val_losses:
        raise InvalidArgument("empty validation curve")
    if patience < 1:
        raise InvalidArgument(f"patience must be >= 1, got {patience}")
    best = min(range(len(val_losses)), key=lambda i: (val_losses[i], i)) + 1
    stop = len(val_losses)
    for epoch in range(best, len(val_losses) + 1):
        if epoch - best >= patience:
            stop = epoch
            break
    return EarlyStopResult(best, stop)


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 16
    patience: int = 5
    seed: int = 0
    split: tuple[float, float, float] = (0.7, 0.2, 0.1)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgument("learning rate must be positive")
        if self.epochs < 1:
            raise InvalidArgument("need at least one epoch")
        if self.batch_size < 1:
            raise InvalidArgument("batch size must be positive")
        if self.patience < 1:
            raise InvalidArgument("patience must be >= 1")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise InvalidArgument("split ratios must sum to 1")


def _train_val(samples, config: TrainConfig, split_seed: int):
    """Train/val sets for a run. Tiny datasets degrade gracefully: an empty
    train part takes every sample, an empty val part falls back to scoring
    on the train set (memorization-style runs stay well defined)."""
    train_set, val_set, _ = split_dataset(samples, config.split, split_seed)
    if not train_set:
        train_set = list(samples)
    if not val_set:
        val_set = train_set
    return train_set, val_set


def _check_finite(value: float, epoch: int) -> float:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value!r}", epoch=epoch)
    return float(value)


def _sgd_loop(network, inputs, sample_loss_grad, val_loss,
              config: TrainConfig, order_rng: Rng):
    """Shared SGD skeleton. `sample_loss_grad(i)` runs forward+backward for
    training sample i and returns (loss, param_grads); `val_loss()` scores
    the whole validation set under current weights."""
    curve = LossCurve()
    best_weights = network.copy_weights()
    best_val = float("inf")
    best_epoch = 0
    names = [name for name, _ in network.param_tensors()]

    for epoch in range(1, config.epochs + 1):
        order = list(range(len(inputs)))
        order_rng.shuffle(order)
        epoch_losses = []
        try:
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                grad_sum = {name: None for name in names}
                for i in batch:
                    loss, grads = sample_loss_grad(i)
                    epoch_losses.append(_check_finite(loss, epoch))
                    for name in names:
                        g = grads[name]
                        grad_sum[name] = g.copy() if grad_sum[name] is None else grad_sum[name] + g
                scale = config.learning_rate / len(batch)
                for name, arr in network.param_tensors():
                    network.set_param(name, arr - scale * grad_sum[name])
            curve.train.append(float(np.mean(epoch_losses)))
            curve.val.append(_check_finite(val_loss(), epoch))
        except NumericError as exc:
            # Exploded weights surface as non-finite activations deeper in
            # the stack; report them as the divergence they are.
            raise TrainingError(f"diverged: {exc}", epoch=epoch) from exc

        if curve.val[-1] < best_val:
            best_val = curve.val[-1]
            best_epoch = epoch
            best_weights = network.copy_weights()
        if epoch - best_epoch >= config.patience:
            break

    network.load_weights(best_weights)
    return curve


def _classifier_views(sample: LabeledSample) -> list[np.ndarray]:
    """What the classifier trains on. A boxed sample contributes two views,
    the rescaled ground-truth crop and the rescaled whole frame; a healthy
    sample only has the whole frame. This mirrors inference, where members
    score lesion crops and the whole image."""
    whole = classifier_input(sample.image)
    if sample.box is not None:
        from .detect import rescale_crop

        return [classifier_input(rescale_crop(sample.image, sample.box)), whole]
    return [whole]


def train_classifier(samples: list[LabeledSample], config: TrainConfig,
                     model_id: str = "classifier") -> tuple[ClassifierModel, LossCurve]:
    """Cross-entropy SGD over image labels; leaves the model at its best
    validation weights."""
    labels = tuple(sorted({s.label for s in samples}))
    if len(labels) < 2:
        raise InvalidArgument("training needs samples from at least two classes")
    label_index = {lab: i for i, lab in enumerate(labels)}

    master = Rng(config.seed)
    train_set, val_set = _train_val(samples, config, master.fork(0).seed)

    network = build_classifier_network(len(labels), master.fork(1))
    order_rng = master.fork(2)

    x_train, y_train = [], []
    for s in train_set:
        for view in _classifier_views(s):
            x_train.append(view)
            y_train.append(label_index[s.label])
    x_val, y_val = [], []
    for s in val_set:
        for view in _classifier_views(s):
            x_val.append(view)
            y_val.append(label_index[s.label])

    def sample_loss_grad(i):
        logits, cache = tensor.network_forward(network, x_train[i])
        probs = tensor.softmax(logits)
        p_true = max(float(probs[y_train[i]]), 1e-300)
        loss = -np.log(p_true)
        dlogits = probs.copy()
        dlogits[y_train[i]] -= 1.0
        back = tensor.network_backward(network, cache, dlogits)
        return loss, back.param_grads

    def val_loss():
        total = 0.0
        for x, y in zip(x_val, y_val):
            out, _ = tensor.network_forward(network, x)
            probs = tensor.softmax(out)
            total += -np.log(max(float(probs[y]), 1e-300))
        return total / len(x_val)

    curve = _sgd_loop(network, x_train, sample_loss_grad, val_loss,
                      config, order_rng)
    model = ClassifierModel(network, labels, {
        "id": model_id,
        "seed": config.seed,
        "class_count": len(labels),
        "training_phase": f"epochs={len(curve.val)}",
    })
    return model, curve


def detector_target(box: BBox | None, image_w: int, image_h: int) -> np.ndarray:
    """Per-cell 0/1 target map: a cell is positive when its center (at
    detector input scale) falls inside the ground-truth box."""
    n = DETECTOR_MAP_SIZE
    target = np.zeros((n, n), dtype=np.float64)
    if box is None:
        return target
    in_size = n * DETECTOR_STRIDE
    sx = in_size / image_w
    sy = in_size / image_h
    for i in range(n):
        cy = (i * DETECTOR_STRIDE + DETECTOR_STRIDE / 2)
        for j in range(n):
            cx = (j * DETECTOR_STRIDE + DETECTOR_STRIDE / 2)
            if (box.x0 * sx <= cx < box.x1 * sx) and (box.y0 * sy <= cy < box.y1 * sy):
                target[i, j] = 1.0
    return target


def train_detector(samples: list[LabeledSample], config: TrainConfig,
                   model_id: str = "detector") -> tuple[DetectorModel, LossCurve]:
    """Per-cell binary cross-entropy SGD against ground-truth boxes."""
    if not samples:
        raise InvalidArgument("training needs at least one sample")

    master = Rng(config.seed)
    train_set, val_set = _train_val(samples, config, master.fork(0).seed)

    network = build_detector_network(master.fork(1))
    order_rng = master.fork(2)

    x_train = [detector_input(s.image) for s in train_set]
    t_train = [detector_target(s.box, s.image.width, s.image.height) for s in train_set]
    x_val = [detector_input(s.image) for s in val_set]
    t_val = [detector_target(s.box, s.image.width, s.image.height) for s in val_set]

    n_cells = DETECTOR_MAP_SIZE * DETECTOR_MAP_SIZE
    eps = 1e-12

    def bce(p: np.ndarray, t: np.ndarray) -> float:
        pc = np.clip(p, eps, 1.0 - eps)
        return float(np.mean(-t * np.log(pc) - (1.0 - t) * np.log(1.0 - pc)))

    def sample_loss_grad(i):
        out, cache = tensor.network_forward(network, x_train[i])
        p = out[0]
        t = t_train[i]
        loss = bce(p, t)
        # dL/dp with the probability clamped away from 0 and 1; the sigmoid
        # backward multiplies by p*(1-p), so saturated cells get a clean
        # (p - t)/N instead of NaN.
        pc = np.clip(p, eps, 1.0 - eps)
        dp = (pc - t) / (pc * (1.0 - pc) * n_cells)
        back = tensor.network_backward(network, cache, dp[None, :, :])
        return loss, back.param_grads

    def val_loss():
        total = 0.0
        for x, t in zip(x_val, t_val):
            out, _ = tensor.network_forward(network, x)
            total += bce(out[0], t)
        return total / len(x_val)

    curve = _sgd_loop(network, x_train, sample_loss_grad, val_loss,
                      config, order_rng)
    model = DetectorModel(network, {
        "id": model_id,
        "seed": config.seed,
        "training_phase": f"epochs={len(curve.val)}",
    })
    return model, curve
