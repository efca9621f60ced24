"""Ensemble configuration, class alignment, soft voting, and the end-to-end
diagnosis pipeline (detect, crop, classify with every member, fuse, render).

Soft voting averages member probability vectors elementwise (optionally
weighted) over an aligned label set. Alignment handles members trained on
different label sets either by intersecting (and renormalizing) or by taking
the union with zeros for missing classes.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from . import imaging
from .classify import ClassDistribution, ModelRegistry, classify
from .detect import (
    DEFAULT_MIN_AREA,
    DEFAULT_THRESHOLD,
    BBox,
    boxes_from_objectness,
    lesion_mask,
    objectness,
    rescale_crop,
)
from .errors import AlignmentError, DegenerateDistributionError, InvalidArgument, PipelineError
from .imaging import ImageU8
from .timing import NullTimer, StageTimer, TimingBreakdown

ALIGNMENT_POLICIES = ("intersection", "union-zero-fill")

#: Solid tint drawn over detected lesion pixels in the diagnosis overlay.
OVERLAY_COLOR = (255, 0, 0)


@dataclass
class EnsembleConfig:
    """Which models vote, how their label sets are aligned, and the
    detection / overlay knobs used by the pipeline."""

    members: tuple[str, ...]
    detector: str
    policy: str = "intersection"
    weights: tuple[float, ...] | None = None
    overlay_alpha: float = 0.4
    detection_threshold: float = DEFAULT_THRESHOLD
    min_area_px: int = DEFAULT_MIN_AREA
    name: str = "ensemble"

    def __post_init__(self):
        self.members = tuple(self.members)
        if not self.members:
            raise InvalidArgument("ensemble needs at least one member")
        if len(set(self.members)) != len(self.members):
            raise InvalidArgument("duplicate member ids in ensemble config")
        if self.policy not in ALIGNMENT_POLICIES:
            raise InvalidArgument(f"unknown alignment policy {self.policy!r}")
        if self.weights is not None:
            self.weights = tuple(float(w) for w in self.weights)
            if len(self.weights) != len(self.members):
                raise InvalidArgument("one weight per member required")
        if not 0.0 <= self.overlay_alpha <= 1.0:
            raise InvalidArgument(f"overlay alpha {self.overlay_alpha} outside [0, 1]")
        if not 0.0 < self.detection_threshold < 1.0:
            raise InvalidArgument("detection threshold must lie in (0, 1)")
        if self.min_area_px < 0:
            raise InvalidArgument("min_area_px must be nonnegative")

    def to_dict(self) -> dict:
        d = {
            "members": list(self.members),
            "detector": self.detector,
            "policy": self.policy,
            "overlay_alpha": self.overlay_alpha,
            "detection_threshold": self.detection_threshold,
            "min_area_px": self.min_area_px,
            "name": self.name,
        }
        if self.weights is not None:
            d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        if not isinstance(d, dict) or "members" not in d or "detector" not in d:
            raise InvalidArgument("ensemble config needs members and detector")
        return cls(
            members=tuple(d["members"]),
            detector=d["detector"],
            policy=d.get("policy", "intersection"),
            weights=tuple(d["weights"]) if d.get("weights") is not None else None,
            overlay_alpha=float(d.get("overlay_alpha", 0.4)),
            detection_threshold=float(d.get("detection_threshold", DEFAULT_THRESHOLD)),
            min_area_px=int(d.get("min_area_px", DEFAULT_MIN_AREA)),
            name=str(d.get("name", "ensemble")),
        )

    def validate(self, registry: ModelRegistry) -> None:
        """Check that every referenced model exists with the right role."""
        for mid in self.members:
            registry.classifier(mid)
        registry.detector(self.detector)


def load_config(path: str) -> EnsembleConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return EnsembleConfig.from_dict(json.load(fh))


def save_config(config: EnsembleConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def align_classes(dists: list[ClassDistribution], policy: str) -> list[ClassDistribution]:
    """Project every distribution onto one shared, sorted label tuple.

    intersection: keep labels common to all members and renormalize each
    distribution over them; an empty intersection or a member with zero
    total mass on it is an error.

    union-zero-fill: every label any member knows, with probability 0 where
    a member lacks the class. No mass is lost, so no renormalization.
    """
    if not dists:
        raise InvalidArgument("nothing to align")
    if policy == "intersection":
        shared = set(dists[0].labels)
        for d in dists[1:]:
            shared &= set(d.labels)
        if not shared:
            raise AlignmentError("no class labels common to all members")
        labels = tuple(sorted(shared))
        out = []
        for d in dists:
            kept = np.array([d.prob(lab) for lab in labels], dtype=np.float64)
            mass = float(kept.sum())
            if mass <= 0.0:
                raise DegenerateDistributionError(
                    "member assigns zero probability to every shared class")
            out.append(ClassDistribution(labels, kept / mass))
        return out
    if policy == "union-zero-fill":
        union = set()
        for d in dists:
            union |= set(d.labels)
        labels = tuple(sorted(union))
        out = []
        for d in dists:
            vals = np.array(
                [d.prob(lab) if lab in d.labels else 0.0 for lab in labels],
                dtype=np.float64)
            out.append(ClassDistribution(labels, vals))
        return out
    raise InvalidArgument(f"unknown alignment policy {policy!r}")


def soft_vote(dists: list[ClassDistribution],
              weights: list[float] | None = None) -> tuple[ClassDistribution, str]:
    """Weighted elementwise mean of aligned distributions plus the decision.

    All inputs must share one ordered label tuple (run align_classes first).
    Default weights are uniform. Ties in the fused argmax resolve to the
    lexicographically smallest label.
    """
    if not dists:
        raise InvalidArgument("soft vote needs at least one distribution")
    labels = dists[0].labels
    for d in dists[1:]:
        if d.labels != labels:
            raise AlignmentError("distributions are not aligned to one label set")
    if weights is None:
        w = [1.0] * len(dists)
    else:
        w = [float(x) for x in weights]
        if len(w) != len(dists):
            raise InvalidArgument("one weight per distribution required")
        if any(x < 0.0 for x in w):
            raise InvalidArgument("weights must be nonnegative")
    wsum = sum(w)
    if wsum <= 0.0:
        raise InvalidArgument("weights must not all be zero")
    acc = np.zeros(len(labels), dtype=np.float64)
    for wk, d in zip(w, dists):
        acc += wk * d.probs
    fused_probs = acc / wsum
    total = float(fused_probs.sum())
    if total <= 0.0:
        raise DegenerateDistributionError("fused distribution has zero mass")
    fused = ClassDistribution(labels, fused_probs / total)
    label, _ = fused.decide()
    return fused, label


@dataclass
class Diagnosis:
    """Everything the pipeline produces for one image."""

    request_id: str
    fused: ClassDistribution
    per_model: dict[str, ClassDistribution]
    boxes: list[BBox]
    per_box: list[ClassDistribution]
    overlay: ImageU8
    timing: TimingBreakdown | None = None
    created_at: str = ""
    config_name: str = "ensemble"

    @property
    def final(self) -> tuple[str, float]:
        """Decision derived from the fused distribution; always consistent
        with it by construction."""
        return self.fused.decide()

    @property
    def final_label(self) -> str:
        return self.final[0]

    @property
    def final_probability(self) -> float:
        return self.final[1]


def _mean_distributions(dists: list[ClassDistribution],
                        weights: list[float]) -> np.ndarray:
    acc = np.zeros(len(dists[0].labels), dtype=np.float64)
    for w, d in zip(weights, dists):
        acc += w * d.probs
    return acc / sum(weights)


def diagnose(img: ImageU8, config: EnsembleConfig, registry: ModelRegistry,
             timer=None, request_id: str | None = None) -> Diagnosis:
    """Run the full pipeline on one decoded image.

    Detection failures never abort the run: with no boxes, members classify
    the whole image only. With boxes, the fused whole-image distribution and
    the mean of the fused per-box distributions are averaged half and half.
    Stage timings land in the supplied timer when one is given.
    """
    timer = timer if timer is not None else NullTimer()
    config.validate(registry)
    detector = registry.detector(config.detector)
    members = [registry.classifier(mid) for mid in config.members]
    weights = list(config.weights) if config.weights is not None else [1.0] * len(members)

    try:
        with timer.stage("detect_inference"):
            omap = objectness(img, detector)
            boxes = boxes_from_objectness(
                omap, img.width, img.height,
                config.detection_threshold, config.min_area_px)
    except Exception as exc:
        raise PipelineError("detect_inference", exc) from exc

    try:
        with timer.stage("classify_inference"):
            whole = imaging.resize_bilinear(img, 64, 64)
            whole_dists = [classify(whole, m) for m in members]
            box_dists = []
            for box in boxes:
                crop = rescale_crop(img, box)
                box_dists.append([classify(crop, m) for m in members])
    except Exception as exc:
        raise PipelineError("classify_inference", exc) from exc

    try:
        with timer.stage("vote"):
            whole_aligned = align_classes(whole_dists, config.policy)
            whole_fused, _ = soft_vote(whole_aligned, weights)
            per_box_fused = []
            for dists in box_dists:
                aligned = align_classes(dists, config.policy)
                fused, _ = soft_vote(aligned, weights)
                per_box_fused.append(fused)
            if per_box_fused:
                box_mean = _mean_distributions(per_box_fused, [1.0] * len(per_box_fused))
                combined = 0.5 * whole_fused.probs + 0.5 * box_mean
                combined = combined / float(combined.sum())
                fused_final = ClassDistribution(whole_fused.labels, combined)
            else:
                fused_final = whole_fused
    except Exception as exc:
        raise PipelineError("vote", exc) from exc

    try:
        with timer.stage("visualization"):
            mask = lesion_mask(omap, img.width, img.height, config.detection_threshold)
            overlay = imaging.alpha_blend(
                img, OVERLAY_COLOR, mask.astype(np.float64), config.overlay_alpha)
    except Exception as exc:
        raise PipelineError("visualization", exc) from exc

    per_model = {mid: dist for mid, dist in zip(config.members, whole_dists)}
    breakdown = timer.breakdown(f"{img.width}x{img.height}") if isinstance(
        timer, StageTimer) else None
    return Diagnosis(
        request_id=request_id if request_id is not None else uuid.uuid4().hex,
        fused=fused_final,
        per_model=per_model,
        boxes=boxes,
        per_box=per_box_fused,
        overlay=overlay,
        timing=breakdown,
        created_at=datetime.now(timezone.utc).isoformat(),
        config_name=config.name,
    )


def single_model_config(config: EnsembleConfig, member: str) -> EnsembleConfig:
    """Same pipeline settings restricted to one member; used when comparing
    individual models against the ensemble."""
    if member not in config.members:
        raise InvalidArgument(f"{member!r} is not a member of this ensemble")
    return replace(config, members=(member,), weights=None, name=member)
