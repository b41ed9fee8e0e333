"""Gradient correctness, optimizer behavior, checkpoint resumption."""

import numpy as np
import pytest

from glance import dwn, training
from glance.errors import NumericsError


def random_small_model(rng):
    f_side = int(rng.integers(2, 4))           # F in {4, 9} -> F <= 8 needs side 2
    cfg = dwn.DwnConfig(
        input_size=f_side * 2, pool_k=2,
        therm_bits=int(rng.integers(1, 3)),
        num_luts=int(rng.integers(2, 5)),
        addr_bits=int(rng.integers(1, 4)),
        seed=int(rng.integers(0, 1000)),
    )
    model = dwn.init_model(cfg)
    feats = rng.normal(0, 1, size=(40, cfg.num_features))
    model.thresholds = dwn.fit_thresholds(feats, cfg.therm_bits)
    model.head.W = rng.normal(0, 0.5, size=(3, cfg.num_luts))
    model.head.c = rng.normal(0, 0.5, size=3)
    return model


def batch_for(model, rng, n=6):
    s = model.config.input_size
    images = rng.uniform(-1, 1, size=(n, s, s))
    targets = rng.normal(size=(n, 3))
    targets /= np.linalg.norm(targets, axis=1, keepdims=True)
    return images, targets


def central_difference(model, images, targets, arr, idx, h=1e-4):
    arr[idx] += h
    lp, _, _ = training.batch_loss_and_grads(model, images, targets)
    arr[idx] -= 2 * h
    lm, _, _ = training.batch_loss_and_grads(model, images, targets)
    arr[idx] += h
    return (lp - lm) / (2 * h)


def test_gradients_match_finite_differences_sampled():
    # spot-check; the exhaustive 10-model sweep lives in the acceptance suite
    rng = np.random.default_rng(0)
    model = random_small_model(rng)
    images, targets = batch_for(model, rng)
    _, grads, _ = training.batch_loss_and_grads(model, images, targets)
    tensors = {"entries": model.luts.entries, "W": model.head.W, "c": model.head.c}
    checked = 0
    for name, arr in tensors.items():
        flat = arr.reshape(-1)
        for k in rng.choice(flat.size, size=min(8, flat.size), replace=False):
            idx = np.unravel_index(k, arr.shape)
            fd = central_difference(model, images, targets, arr, idx)
            an = grads[name][idx]
            assert abs(fd - an) / max(abs(fd), abs(an), 1e-6) < 1e-4
            checked += 1
    assert checked >= 16


def test_single_sample_loss_decreases():
    rng = np.random.default_rng(1)
    model = random_small_model(rng)
    model.config = dwn.DwnConfig(**{**vars(model.config), "learning_rate": 1e-4,
                                    "weight_decay": 0.0})
    images, targets = batch_for(model, rng, n=1)
    before, _, _ = training.batch_loss_and_grads(model, images, targets)
    opt = training.AdamState.for_model(model)
    training.train_step(model, images, targets, opt)
    after, _, _ = training.batch_loss_and_grads(model, images, targets)
    assert after < before


def test_optimum_changes_only_by_weight_decay():
    # pred == target: the normalization Jacobian kills the loss gradient,
    # so a fresh optimizer moves parameters only through weight decay
    cfg = dwn.DwnConfig(input_size=2, pool_k=2, therm_bits=1, num_luts=1, addr_bits=1,
                        weight_decay=1e-3, seed=0)
    model = dwn.init_model(cfg)
    model.thresholds = dwn.ThresholdTable(tau=np.array([[0.0]]))
    model.luts.entries[:] = 0.0
    model.head.W = np.zeros((3, 1))
    model.head.c = np.array([0.0, 0.0, 2.0])   # ghat = [0,0,1] for any input
    images = np.full((1, 2, 2), 0.5)
    targets = np.array([[0.0, 0.0, 1.0]])
    opt = training.AdamState.for_model(model)
    training.train_step(model, images, targets, opt)
    expected_c = 2.0 * (1.0 - cfg.learning_rate * cfg.weight_decay)
    assert model.head.c[2] == pytest.approx(expected_c, rel=1e-9)
    assert np.all(model.head.W == 0.0)


def test_non_finite_loss_aborts_step():
    rng = np.random.default_rng(2)
    model = random_small_model(rng)
    model.luts.entries[0, 0] = np.nan
    # force address 0 by clearing thresholds below all features
    model.thresholds.tau[:] = -100.0
    images, targets = batch_for(model, rng)
    before = model.head.W.copy()
    opt = training.AdamState.for_model(model)
    with pytest.raises(NumericsError):
        training.train_step(model, images, targets, opt)
    assert np.array_equal(model.head.W, before)


def test_clip_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([0.0, 4.0])}
    total = training.clip_global_norm(grads, 1.0)
    assert total == pytest.approx(5.0)
    clipped = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    assert clipped == pytest.approx(1.0)


def test_training_determinism():
    results = []
    for _ in range(2):
        rng = np.random.default_rng(3)
        model = random_small_model(rng)
        images, targets = batch_for(model, rng, n=30)
        model, hist = training.fit(model, images, targets, epochs=3)
        results.append((model.luts.entries.copy(), model.head.W.copy(),
                        [h.mean_loss for h in hist]))
    assert np.array_equal(results[0][0], results[1][0])
    assert np.array_equal(results[0][1], results[1][1])
    assert results[0][2] == results[1][2]


def test_checkpoint_resume_reproduces_run(tmp_path):
    rng = np.random.default_rng(4)
    model = random_small_model(rng)
    images, targets = batch_for(model, rng, n=30)

    # uninterrupted 4-epoch run
    ref = random_small_model(np.random.default_rng(4))
    ref.thresholds = model.thresholds
    _, ref_hist = training.fit(ref, images, targets, epochs=4)

    # train 2, checkpoint, reload, continue to 4
    opt = training.AdamState.for_model(model)
    model, _ = training.fit(model, images, targets, epochs=2, opt=opt)
    path = tmp_path / "ckpt.npz"
    training.save_checkpoint(path, model, opt, epoch=2)
    loaded, opt2, start = training.load_checkpoint(path)
    assert start == 2
    loaded, hist2 = training.fit(loaded, images, targets, epochs=4, opt=opt2, start_epoch=start)
    assert hist2[0].mean_loss == pytest.approx(ref_hist[2].mean_loss, rel=1e-12)
    assert hist2[1].mean_loss == pytest.approx(ref_hist[3].mean_loss, rel=1e-12)


def test_stack_samples_feeds_train_step():
    rng = np.random.default_rng(5)
    model = random_small_model(rng)
    s = model.config.input_size
    samples = [
        dwn.GazeSample(image=rng.uniform(-1, 1, (s, s)), target=rng.normal(size=3))
        for _ in range(4)
    ]
    images, targets = training.stack_samples(samples)
    assert np.allclose(np.linalg.norm(targets, axis=1), 1.0, atol=1e-7)
    opt = training.AdamState.for_model(model)
    _, step_loss = training.train_step(model, images, targets, opt)
    assert np.isfinite(step_loss)


def test_degenerate_samples_are_skipped_not_fatal():
    # one sample lands exactly behind the norm guard (y = 0); the batch
    # loss averages over the remaining sample
    cfg = dwn.DwnConfig(input_size=4, pool_k=2, therm_bits=1, num_luts=2, addr_bits=1, seed=1)
    model = dwn.init_model(cfg)
    model.thresholds = dwn.ThresholdTable(tau=np.zeros((4, 1)))
    # uniform images make every soft bit equal, so z = [p, 1-p] regardless
    # of the drawn wiring and y = [2p-1, 0, 0]
    model.luts.entries[:] = np.array([[0.0, 1.0], [1.0, 0.0]])
    model.head.W = np.array([[1.0, -1.0], [0.0, 0.0], [0.0, 0.0]])
    model.head.c = np.zeros(3)
    img_zero = np.zeros((4, 4))        # f = 0 = tau -> p = 0.5 -> y = 0 exactly
    img_on = np.full((4, 4), 1.0)      # p = sigma(tanh(1)/T) != 0.5
    images = np.stack([img_on, img_zero])
    targets = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    loss, grads, cache = training.batch_loss_and_grads(model, images, targets)
    assert cache.keep.tolist() == [True, False]
    assert np.isfinite(loss)
