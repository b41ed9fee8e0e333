import numpy as np
import pytest

from glance import dwn, training
from glance.synthetic import GazeFixtureOptions, make_gaze_fixture

FIXTURE_SEED = 11
VAL_COUNT = 600


@pytest.fixture(scope="session")
def gaze_fixture():
    """The bundled synthetic gaze fixture, split train/val."""
    images, targets = make_gaze_fixture(GazeFixtureOptions(seed=FIXTURE_SEED))
    return {
        "train_images": images[:-VAL_COUNT],
        "train_targets": targets[:-VAL_COUNT],
        "val_images": images[-VAL_COUNT:],
        "val_targets": targets[-VAL_COUNT:],
    }


@pytest.fixture(scope="session")
def trained_model(gaze_fixture):
    """Default-config model trained for 30 epochs on the fixture.

    Shared by the acceptance suite (training sanity) and the quantization
    fidelity tests; takes ~30 s once per session.
    """
    cfg = dwn.DwnConfig(seed=0)
    model = dwn.init_model(cfg)
    feats = dwn.preprocess(gaze_fixture["train_images"], cfg.input_size, cfg.pool_k)
    model.thresholds = dwn.fit_thresholds(feats, cfg.therm_bits)
    init_err = training.evaluate_angular(
        model, gaze_fixture["val_images"], gaze_fixture["val_targets"]
    )
    model, history = training.fit(
        model,
        gaze_fixture["train_images"],
        gaze_fixture["train_targets"],
        epochs=30,
        val_images=gaze_fixture["val_images"],
        val_targets=gaze_fixture["val_targets"],
    )
    return {"model": model, "init_error": init_err, "history": history}
