"""Per-model classification, class distributions, model serialization, and
the on-disk model registry.

The classifier is a second frozen architecture: 64x64x3 input, conv3x3x8+relu,
pool, conv3x3x16+relu, pool, global average pooling to 16 features, and a
dense softmax head over C classes.

Model files are a small binary container: magic ``ENSL``, a little-endian
u32 format version (currently 1), a u32 metadata length, UTF-8 JSON metadata
(architecture, input shape, class labels, tensor order), the raw float64
little-endian weights in declared order, and a trailing CRC32 of the weight
bytes. Every load failure maps to a distinct error type so callers can tell
truncation from corruption from an architecture mismatch.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import imaging, tensor
from .detect import DETECTOR_ARCH, DetectorModel, build_detector_network
from .errors import (
    ArchitectureMismatchError,
    ChecksumError,
    InvalidArgument,
    InvalidMagicError,
    ModelLoadError,
    RegistryError,
    ShapeError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .imaging import ImageU8
from .rng import Rng

CLASSIFIER_ARCH = "tiny-classifier-v1"
CLASSIFIER_INPUT = (3, 64, 64)

MODEL_MAGIC = b"ENSL"
MODEL_VERSION = 1


@dataclass
class ClassDistribution:
    """Probabilities over an ordered label tuple. Sums to 1 within 1e-9."""

    labels: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if len(set(self.labels)) != len(self.labels):
            raise InvalidArgument("duplicate class labels in distribution")
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (len(self.labels),):
            raise InvalidArgument(
                f"probs shape {p.shape} does not match {len(self.labels)} labels")
        if len(self.labels) == 0:
            raise InvalidArgument("empty distribution")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0 + 1e-12:
            raise InvalidArgument("probabilities must be finite and in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise InvalidArgument(f"probabilities sum to {p.sum()!r}, not 1")
        self.probs = p

    def prob(self, label: str) -> float:
        return float(self.probs[self.labels.index(label)])

    def decide(self) -> tuple[str, float]:
        """Argmax label; exact ties go to the lexicographically smallest."""
        best = 0
        for i in range(1, len(self.labels)):
            if self.probs[i] > self.probs[best] or (
                    self.probs[i] == self.probs[best] and self.labels[i] < self.labels[best]):
                best = i
        return self.labels[best], float(self.probs[best])

    def to_dict(self) -> dict[str, float]:
        return {lab: float(p) for lab, p in zip(self.labels, self.probs)}


def build_classifier_network(class_count: int, rng: Rng | None = None) -> tensor.Network:
    """Frozen classifier graph for C classes. With an rng, conv kernels and
    the head get He-uniform values in parameter order, biases start at zero."""
    if class_count < 2:
        raise InvalidArgument(f"classifier needs at least 2 classes, got {class_count}")

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
        tensor.ConvLayer("conv2", init((16, 8, 3, 3), 72), zeros((16,)),
                         stride=1, pad=1, activation="relu"),
        tensor.MaxPool2Layer("pool2"),
        tensor.GlobalAvgPoolLayer("gap"),
        tensor.DenseLayer("head", init((class_count, 16), 16), zeros((class_count,))),
    ]
    return tensor.Network(CLASSIFIER_ARCH, CLASSIFIER_INPUT, layers)


@dataclass
class ClassifierModel:
    """Classification network bound to its ordered class labels."""

    network: tensor.Network
    class_labels: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.class_labels = tuple(self.class_labels)
        if len(self.class_labels) < 2:
            raise InvalidArgument("classifier needs at least 2 class labels")
        if len(set(self.class_labels)) != len(self.class_labels):
            raise InvalidArgument("class labels must be unique")
        head = self.network.layers[-1]
        if head.w.shape[0] != len(self.class_labels):
            raise ArchitectureMismatchError(
                f"head has {head.w.shape[0]} outputs for {len(self.class_labels)} labels")

    @classmethod
    def initialize(cls, class_labels, seed: int, model_id: str = "classifier",
                   created_at: str = "") -> "ClassifierModel":
        labels = tuple(class_labels)
        net = build_classifier_network(len(labels), Rng(seed))
        meta = {"id": model_id, "created_at": created_at, "seed": seed,
                "class_count": len(labels)}
        return cls(net, labels, meta)

    @property
    def model_id(self) -> str:
        return self.metadata.get("id", "classifier")


def classifier_input(img: ImageU8) -> np.ndarray:
    """Resize to 64x64 if needed and normalize to [0, 1], channels first."""
    resized = imaging.resize_bilinear(img, CLASSIFIER_INPUT[1], CLASSIFIER_INPUT[2])
    return resized.pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def _check_input(img: ImageU8) -> np.ndarray:
    if (img.height, img.width) != CLASSIFIER_INPUT[1:]:
        raise ShapeError(
            f"classifier input must be 64x64, got {img.height}x{img.width}; "
            "rescale before classifying")
    return img.pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def classify(img: ImageU8, model: ClassifierModel) -> ClassDistribution:
    """Softmax distribution over the model's classes for one 64x64 image.

    The caller rescales; anything but 64x64 input is a shape error.
    """
    out, _ = tensor.network_forward(model.network, _check_input(img))
    return ClassDistribution(model.class_labels, tensor.softmax(out))


def class_logits(img: ImageU8, model: ClassifierModel) -> np.ndarray:
    """Raw pre-softmax scores; handy for pinning regression values."""
    out, _ = tensor.network_forward(model.network, _check_input(img))
    return out


# --- model files -----------------------------------------------------------

def _model_metadata(model) -> dict:
    net = model.network
    meta = {
        "architecture": net.name,
        "input": list(net.input_shape),
        "tensors": [{"name": name, "shape": list(t.shape)}
                    for name, t in net.param_tensors()],
    }
    if isinstance(model, ClassifierModel):
        meta["class_labels"] = list(model.class_labels)
    extra = {k: v for k, v in model.metadata.items() if k not in meta}
    meta.update(extra)
    return meta


def save_model(model, path: str) -> None:
    """Write a classifier or detector to the binary container format."""
    meta_bytes = json.dumps(_model_metadata(model), sort_keys=True).encode("utf-8")
    weight_parts = [t.astype("<f8").tobytes() for _, t in model.network.param_tensors()]
    weights = b"".join(weight_parts)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(weights)
        fh.write(struct.pack("<I", zlib.crc32(weights) & 0xFFFFFFFF))


def _expected_tensors(meta: dict):
    """Rebuild the frozen architecture named in metadata, then check that
    the declared tensor list matches it exactly."""
    arch = meta.get("architecture")
    if arch == CLASSIFIER_ARCH:
        labels = meta.get("class_labels")
        if not isinstance(labels, list) or len(labels) < 2:
            raise ArchitectureMismatchError("classifier metadata lacks class labels")
        net = build_classifier_network(len(labels))
    elif arch == DETECTOR_ARCH:
        net = build_detector_network()
    else:
        raise ArchitectureMismatchError(f"unknown architecture {arch!r}")
    declared = meta.get("tensors")
    expected = [{"name": name, "shape": list(t.shape)} for name, t in net.param_tensors()]
    if declared != expected:
        raise ArchitectureMismatchError(
            f"tensor list {declared!r} does not match {arch} layout")
    return net


def load_model(path: str):
    """Read a model file back; returns ClassifierModel or DetectorModel.

    Raises InvalidMagicError, UnsupportedVersionError, TruncatedFileError,
    ChecksumError, or ArchitectureMismatchError as appropriate.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise TruncatedFileError(f"model file is only {len(blob)} bytes")
    if blob[:4] != MODEL_MAGIC:
        raise InvalidMagicError(f"bad magic {blob[:4]!r}")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(f"unsupported model version {version}")
    meta_len = struct.unpack("<I", blob[8:12])[0]
    if 12 + meta_len > len(blob):
        raise TruncatedFileError("metadata extends past end of file")
    try:
        meta = json.loads(blob[12:12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"metadata is not valid JSON: {exc}") from exc
    if not isinstance(meta, dict):
        raise ModelLoadError("metadata must be a JSON object")

    net = _expected_tensors(meta)
    counts = [int(np.prod(t.shape)) for _, t in net.param_tensors()]
    weight_bytes = sum(counts) * 8
    body_start = 12 + meta_len
    if len(blob) != body_start + weight_bytes + 4:
        raise TruncatedFileError(
            f"expected {body_start + weight_bytes + 4} bytes, file has {len(blob)}")
    weights = blob[body_start:body_start + weight_bytes]
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(weights) & 0xFFFFFFFF != stored_crc:
        raise ChecksumError("weight checksum mismatch")

    flat = np.frombuffer(weights, dtype="<f8")
    offset = 0
    values = []
    for (_, t), n in zip(net.param_tensors(), counts):
        values.append(flat[offset:offset + n].reshape(t.shape).astype(np.float64))
        offset += n
    net.load_weights(values)

    extra = {k: v for k, v in meta.items()
             if k not in ("architecture", "input", "tensors", "class_labels")}
    if meta["architecture"] == CLASSIFIER_ARCH:
        return ClassifierModel(net, tuple(meta["class_labels"]), extra)
    return DetectorModel(net, extra)


# --- registry ---------------------------------------------------------------

ROLES = ("classifier", "detector")


@dataclass
class RegistryEntry:
    model_id: str
    role: str
    path: str
    model: object

    @property
    def metadata(self) -> dict:
        return self.model.metadata


@dataclass
class ModelRegistry:
    """Loaded models keyed by id, each tagged classifier or detector."""

    entries: dict[str, RegistryEntry] = field(default_factory=dict)

    def add(self, model, role: str, path: str = "") -> RegistryEntry:
        if role not in ROLES:
            raise RegistryError(f"unknown role {role!r}")
        is_clf = isinstance(model, ClassifierModel)
        if (role == "classifier") != is_clf:
            raise RegistryError(
                f"model {model.model_id!r} declared {role} but is "
                f"{'a classifier' if is_clf else 'a detector'}")
        if model.model_id in self.entries:
            raise RegistryError(f"duplicate model id {model.model_id!r}")
        entry = RegistryEntry(model.model_id, role, path, model)
        self.entries[model.model_id] = entry
        return entry

    def get(self, model_id: str) -> RegistryEntry:
        if model_id not in self.entries:
            raise RegistryError(f"no model with id {model_id!r}")
        return self.entries[model_id]

    def classifier(self, model_id: str) -> ClassifierModel:
        entry = self.get(model_id)
        if entry.role != "classifier":
            raise RegistryError(f"model {model_id!r} is not a classifier")
        return entry.model

    def detector(self, model_id: str) -> DetectorModel:
        entry = self.get(model_id)
        if entry.role != "detector":
            raise RegistryError(f"model {model_id!r} is not a detector")
        return entry.model

    def ids(self, role: str | None = None) -> list[str]:
        return [e.model_id for e in self.entries.values()
                if role is None or e.role == role]


def load_registry(directory: str) -> ModelRegistry:
    """Read manifest.json from a model directory and load every entry.

    The manifest lists ``{"models": [{"id": ..., "file": ..., "role": ...}]}``.
    Ids must be unique and files must load cleanly (checksums included).
    """
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise RegistryError(f"no manifest.json in {directory}")
    except json.JSONDecodeError as exc:
        raise RegistryError(f"manifest.json is not valid JSON: {exc}")
    rows = manifest.get("models")
    if not isinstance(rows, list):
        raise RegistryError("manifest must contain a 'models' list")

    registry = ModelRegistry()
    for row in rows:
        if not isinstance(row, dict) or not {"id", "file", "role"} <= set(row):
            raise RegistryError(f"bad manifest row {row!r}")
        path = os.path.join(directory, row["file"])
        if not os.path.exists(path):
            raise RegistryError(f"model file {row['file']!r} is missing")
        model = load_model(path)
        model.metadata["id"] = row["id"]
        registry.add(model, row["role"], path)
    return registry
