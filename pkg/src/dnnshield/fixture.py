"""Toy victim fixture: an 8-class synthetic pattern dataset and a small CNN.

Classes are geometric templates (bars, diagonals, blobs, rings) rendered with
random amplitude, background and per-sample Gaussian noise level, so trained
models see a spread of classification confidences rather than saturating.
"""

import numpy as np

from .engine import (
    AvgPool,
    Conv2D,
    Flatten,
    FullyConnected,
    LabeledDataset,
    MaxPool,
    Model,
    ReLU,
    Softmax,
)

NUM_CLASSES = 8
IMAGE_SHAPE = (1, 12, 12)


def _templates():
    t = np.zeros((NUM_CLASSES, 12, 12), dtype=np.float32)
    t[0, 2:4, 1:11] = 1.0                      # horizontal bar
    t[1, 1:11, 2:4] = 1.0                      # vertical bar
    for i in range(12):                        # diagonal band
        t[2, i, max(0, i - 1):min(12, i + 2)] = 1.0
    for i in range(12):                        # anti-diagonal band
        t[3, i, max(0, 10 - i):min(12, 13 - i)] = 1.0
    t[4, 4:8, 4:8] = 1.0                       # center block
    for r, c in ((0, 0), (0, 9), (9, 0), (9, 9)):  # corner dots
        t[5, r:r + 3, c:c + 3] = 1.0
    t[6, 1:11, 1:11] = 1.0                     # ring
    t[6, 3:9, 3:9] = 0.0
    t[7, 8:10, 1:11] = 1.0                     # low bar + short vertical
    t[7, 1:7, 8:10] = 1.0
    return t


TEMPLATES = _templates()


def make_dataset(n, seed, noise_low=0.10, noise_high=0.45, mix_prob=0.3,
                 mix_low=0.25, mix_high=0.6):
    """n samples, classes drawn round-robin, deterministic given seed.

    A `mix_prob` fraction blends in a second class's template, producing
    genuinely ambiguous inputs so trained models have a wide confidence
    spread instead of saturating.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    labels = np.arange(n) % NUM_CLASSES
    inputs = np.empty((n,) + IMAGE_SHAPE, dtype=np.float32)
    for i in range(n):
        c = labels[i]
        amp = rng.uniform(0.6, 1.0)
        bg = rng.uniform(0.0, 0.1)
        sigma = rng.uniform(noise_low, noise_high)
        img = amp * TEMPLATES[c] + bg + sigma * rng.standard_normal((12, 12))
        if rng.uniform() < mix_prob:
            other = (c + int(rng.integers(1, NUM_CLASSES))) % NUM_CLASSES
            img = img + rng.uniform(mix_low, mix_high) * amp * TEMPLATES[other]
        inputs[i, 0] = np.clip(img, 0.0, 1.0)
    return LabeledDataset(inputs, labels, NUM_CLASSES)


def moderate_exemplars(model, seed, target_prob=0.7, candidates_per_class=120):
    """One correctly-classified input per class whose top probability is
    closest to `target_prob`.

    Mimicry attacks need exemplars with non-saturated output distributions: a
    one-hot exemplar reduces the probability-matching objective to plain
    confidence maximization. Candidates are template mixtures (valid members
    of their labeled class, like the dataset's ambiguous fraction).
    """
    from . import engine  # local import to avoid a cycle at module load

    rng = np.random.Generator(np.random.Philox(key=(int(seed) << 8) + 5))
    chosen = {}
    for c in range(NUM_CLASSES):
        best = None
        for _ in range(candidates_per_class):
            amp = rng.uniform(0.6, 1.0)
            bg = rng.uniform(0.0, 0.1)
            sigma = rng.uniform(0.10, 0.45)
            other = (c + int(rng.integers(1, NUM_CLASSES))) % NUM_CLASSES
            img = amp * TEMPLATES[c] + bg + sigma * rng.standard_normal((12, 12))
            img = img + rng.uniform(0.3, 0.75) * amp * TEMPLATES[other]
            x = np.clip(img, 0.0, 1.0).astype(np.float32)[None]
            logits, probs = engine.forward(model, x)
            if int(np.argmax(logits)) != c:
                continue
            d = abs(float(probs.max()) - target_prob)
            if best is None or d < best[0]:
                best = (d, x)
        if best is None:
            raise RuntimeError(f"no correctly-classified exemplar found for class {c}")
        chosen[c] = best[1]
    return chosen


def fixture_arch():
    """Untrained conv-pool-conv-pool-fc-fc architecture for IMAGE_SHAPE."""

    def z(*shape):
        return np.zeros(shape, dtype=np.float32)

    layers = [
        Conv2D(z(8, 1, 3, 3), z(8), stride=1, padding=1),
        ReLU(),
        MaxPool(2),
        Conv2D(z(16, 8, 3, 3), z(16), stride=1, padding=1),
        ReLU(),
        MaxPool(2),
        Flatten(),
        FullyConnected(z(32, 16 * 3 * 3), z(32)),
        ReLU(),
        FullyConnected(z(NUM_CLASSES, 32), z(NUM_CLASSES)),
        Softmax(),
    ]
    return Model(layers, IMAGE_SHAPE, NUM_CLASSES)
