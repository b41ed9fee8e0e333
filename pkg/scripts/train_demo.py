#!/usr/bin/env python3
"""End-to-end training demo on the in-memory synthetic fixture: fit
thresholds, train 30 epochs, report float vs quantized accuracy, and
write the .dwn artifact."""

import argparse
import time

import numpy as np

from glance import dwn, model_io, training
from glance.synthetic import GazeFixtureOptions, make_gaze_fixture


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--count", type=int, default=6000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="demo_model.dwn")
    args = ap.parse_args()

    images, targets = make_gaze_fixture(GazeFixtureOptions(count=args.count, seed=11))
    n_val = max(200, args.count // 10)
    tr_im, tr_t = images[:-n_val], targets[:-n_val]
    va_im, va_t = images[-n_val:], targets[-n_val:]

    cfg = dwn.DwnConfig(seed=args.seed)
    model = dwn.init_model(cfg)
    model.thresholds = dwn.fit_thresholds(dwn.preprocess(tr_im, cfg.input_size, cfg.pool_k),
                                          cfg.therm_bits)
    print(f"init val error: {training.evaluate_angular(model, va_im, va_t):.1f} deg")

    t0 = time.time()
    model, history = training.fit(
        model, tr_im, tr_t, epochs=args.epochs, val_images=va_im, val_targets=va_t,
        log=lambda r: print(f"epoch {r.epoch:3d}  loss {r.mean_loss:.5f}  "
                            f"val {r.val_error_deg:.2f} deg"),
    )
    print(f"trained {args.epochs} epochs in {time.time() - t0:.0f} s")

    blob = model_io.export_quantized(model)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    qm = model_io.import_quantized(blob)
    q_err = training.evaluate_angular(qm.dequantize(), va_im, va_t)
    f_err = history[-1].val_error_deg
    print(f"float {f_err:.2f} deg | quantized {q_err:.2f} deg "
          f"({len(blob) - model_io.header_bytes(cfg)} payload bytes -> {args.out})")


if __name__ == "__main__":
    main()
