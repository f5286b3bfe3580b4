"""Labeled streamline collections used for training and evaluation."""

from dataclasses import dataclass

import numpy as np

from .geometry import as_streamline

# Final label for streamlines rejected by either stage: not part of any
# superficial cluster. Serialized as the token "NON_SWM" in label files.
NON_SWM = -1


@dataclass
class LabeledDataset:
    """Streamlines paired with integer class labels.

    streamlines: list of (p_i, 3) float64 arrays (point counts may vary)
    labels: (N,) int64 array, one label per streamline
    """

    streamlines: list
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ValueError("labels must be a 1-D array")
        if len(self.streamlines) != self.labels.shape[0]:
            raise ValueError(
                f"{len(self.streamlines)} streamlines but {self.labels.shape[0]} labels"
            )
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self):
        return len(self.streamlines)

    def validate(self):
        """Check every streamline; raises on malformed geometry."""
        for s in self.streamlines:
            as_streamline(s)
        return self

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset([self.streamlines[i] for i in idx], self.labels[idx])

    def class_counts(self, num_classes=None):
        k = num_classes if num_classes is not None else int(self.labels.max()) + 1
        if self.labels.size and self.labels.max() >= k:
            raise ValueError(f"label {self.labels.max()} out of range for {k} classes")
        return np.bincount(self.labels, minlength=k)
