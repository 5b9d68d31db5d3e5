"""Seeded synthetic datasets."""
import numpy as np

from ..dataio import Dataset


def gaussian_blobs(n_samples=300, n_classes=3, separation=6.0, sigma=1.0, seed=1, dim=2):
    """Isotropic blobs whose centers sit on a circle, ``separation * sigma`` apart pairwise-adjacent.

    Samples are split as evenly as possible over the classes.
    """
    rng = np.random.default_rng(seed)
    # chord length between neighbors on a circle of radius r is 2 r sin(pi / C)
    radius = separation * sigma / (2 * np.sin(np.pi / n_classes))
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = np.zeros((n_classes, dim))
    centers[:, 0], centers[:, 1] = radius * np.cos(angles), radius * np.sin(angles)
    labels = np.arange(n_samples) % n_classes
    features = centers[labels] + sigma * rng.normal(size=(n_samples, dim))
    return Dataset(features, labels, [f"blob{c}" for c in range(n_classes)], "blobs")
