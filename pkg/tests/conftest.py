"""Shared fixtures: datasets plus one trained model set, cached under
tests/.cache so a warm test run skips the training cost entirely.

All trained-model recipes live here. Anything that changes a recipe must bump
CACHE_TAG, or stale cached weights will disagree with the golden files.
"""

import csv
import json
import shutil
from pathlib import Path

import pytest

from ensel.classify import load_model, save_model
from ensel.classify import load_registry as _load_registry
from ensel.ensemble import EnsembleConfig, load_config, save_config
from ensel.errors import ModelLoadError
from ensel.train import (
    SyntheticSpec,
    TrainConfig,
    generate_synthetic,
    save_dataset,
    train_classifier,
    train_detector,
)

GEO = dict(height=64, width=64, min_axis=24, max_axis=48)
CACHE_TAG = "fixtures-v1"
CACHE = Path(__file__).parent / ".cache" / CACHE_TAG


# --- dataset recipes ---------------------------------------------------------
# The lesions are drawn large relative to the frame so that a whole-image
# view still carries enough pooled signal to classify; the spec defaults
# (96 px, 10-30 px axes) stay untouched for users.


def ref_dataset():
    """400 images, gentle noise: the well-trained reference classifier."""
    return generate_synthetic(SyntheticSpec(per_class=100, noise=5, **GEO), 11)


def member_dataset(which: str):
    """200 images per ensemble member, one seed each (11 and 12)."""
    seed = {"a": 11, "b": 12}[which]
    return generate_synthetic(SyntheticSpec(per_class=50, noise=20, **GEO), seed)


def detector_dataset():
    """180 images across three noise levels for the shared detector."""
    samples = []
    for noise, seed in ((8, 21), (20, 22), (45, 23)):
        samples.extend(
            generate_synthetic(SyntheticSpec(per_class=15, noise=noise, **GEO), seed)
        )
    return samples


def evaluation_dataset():
    """110 held-out test images, half low noise, half high."""
    low = generate_synthetic(SyntheticSpec(per_class=14, noise=8, **GEO), 31)[:55]
    high = generate_synthetic(SyntheticSpec(per_class=14, noise=45, **GEO), 32)[:55]
    return low + high


def cam_dataset():
    """50 boxed images for checking where the class activation maps peak."""
    samples = generate_synthetic(SyntheticSpec(per_class=17, noise=10, **GEO), 41)
    return [s for s in samples if s.box is not None][:50]


def detector_holdout_dataset():
    """120 images (90 boxed, 30 healthy) the detector never trained on."""
    samples = []
    for noise, seed in ((8, 61), (20, 62), (45, 63)):
        samples.extend(
            generate_synthetic(SyntheticSpec(per_class=10, noise=noise, **GEO), seed)
        )
    return samples


# --- training recipes ---------------------------------------------------------


def train_ref():
    return train_classifier(ref_dataset(), TrainConfig(seed=0), model_id="ref")


def train_member(which: str):
    seed = {"a": 11, "b": 12}[which]
    return train_classifier(
        member_dataset(which),
        TrainConfig(seed=seed, epochs=10),
        model_id=f"clf-{which}",
    )


def train_det():
    config = TrainConfig(seed=0, epochs=20, learning_rate=0.1, batch_size=16)
    return train_detector(detector_dataset(), config, model_id="det")


def _cached_model(name: str, builder):
    path = CACHE / f"{name}.ensl"
    if path.exists():
        try:
            return load_model(str(path))
        except ModelLoadError:
            path.unlink()
    model, curve = builder()
    CACHE.mkdir(parents=True, exist_ok=True)
    save_model(model, str(path))
    curve.to_csv(str(CACHE / f"{name}.loss.csv"))
    return model


def _cached_curve(name: str) -> tuple[list[float], list[float]]:
    train, val = [], []
    with open(CACHE / f"{name}.loss.csv", "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            train.append(float(row["train_loss"]))
            val.append(float(row["val_loss"]))
    return train, val


# --- model fixtures -------------------------------------------------------------


@pytest.fixture(scope="session")
def trained_models():
    """The four fixture models, trained on first use and reloaded afterwards."""
    return {
        "ref": _cached_model("ref", train_ref),
        "clf-a": _cached_model("clf-a", lambda: train_member("a")),
        "clf-b": _cached_model("clf-b", lambda: train_member("b")),
        "det": _cached_model("det", train_det),
    }


@pytest.fixture(scope="session")
def ref_model(trained_models):
    return trained_models["ref"]


@pytest.fixture(scope="session")
def detector_model(trained_models):
    return trained_models["det"]


@pytest.fixture(scope="session")
def ref_curve(trained_models):
    return _cached_curve("ref")


@pytest.fixture(scope="session")
def model_dir(trained_models, tmp_path_factory):
    """Registry directory the service and CLI run against: the two ensemble
    members and the detector, plus the ensemble config JSON."""
    directory = tmp_path_factory.mktemp("models")
    rows = []
    for mid in ("clf-a", "clf-b", "det"):
        fname = f"{mid}.ensl"
        shutil.copyfile(CACHE / fname, directory / fname)
        role = "detector" if mid == "det" else "classifier"
        rows.append({"id": mid, "file": fname, "role": role})
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump({"models": rows}, fh, indent=2)
    save_config(pair_config_value(), str(directory / "pair.json"))
    return directory


def pair_config_value() -> EnsembleConfig:
    return EnsembleConfig(members=("clf-a", "clf-b"), detector="det", name="pair")


@pytest.fixture(scope="session")
def registry(model_dir):
    return _load_registry(str(model_dir))


@pytest.fixture(scope="session")
def pair_config(model_dir):
    return load_config(str(model_dir / "pair.json"))


# --- dataset fixtures -------------------------------------------------------------


@pytest.fixture(scope="session")
def test110():
    return evaluation_dataset()


@pytest.fixture(scope="session")
def cam50():
    return cam_dataset()


@pytest.fixture(scope="session")
def det_holdout():
    return detector_holdout_dataset()


@pytest.fixture(scope="session")
def test110_dir(test110, tmp_path_factory):
    directory = tmp_path_factory.mktemp("test110")
    save_dataset(test110, str(directory))
    return directory


# --- service fixture ----------------------------------------------------------------


@pytest.fixture()
def service_client(model_dir, tmp_path, monkeypatch):
    """TestClient over a fresh app instance with its own data directory."""
    from fastapi.testclient import TestClient

    from ensel.service import create_app

    monkeypatch.delenv("ENSEL_MODEL_DIR", raising=False)
    monkeypatch.delenv("ENSEL_CONFIG", raising=False)
    monkeypatch.delenv("ENSEL_DATA_DIR", raising=False)
    app = create_app(
        model_dir=str(model_dir),
        config_path=str(model_dir / "pair.json"),
        data_dir=str(tmp_path / "data"),
    )
    with TestClient(app) as client:
        yield client
