"""Relative-frequency density histograms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Histogram:
    edges: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.density = np.asarray(self.density, dtype=float)
        if self.edges.ndim != 1 or len(self.edges) != len(self.density) + 1:
            raise ValueError("need len(edges) == len(density) + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if np.any(self.density < 0):
            raise ValueError("density must be non-negative")

    @classmethod
    def from_samples(cls, samples, bins: int = 100, value_range=None) -> "Histogram":
        """Density-normalised histogram over the data range (a unit-width bin for one distinct value)."""
        samples = np.asarray(samples, dtype=float)
        if samples.size == 0:
            return cls(np.array([0.0, 1.0]), np.zeros(1))
        if value_range is None:
            lo, hi = float(samples.min()), float(samples.max())
            if hi <= lo:
                lo, hi = lo - 0.5, hi + 0.5
            value_range = (lo, hi)
        counts, edges = np.histogram(samples, bins=bins, range=value_range)
        return cls(edges, counts / (counts.sum() * np.diff(edges)))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def mass(self) -> float:
        return float(np.sum(self.density * self.widths))

    def mode(self) -> float:
        return float(self.centers[np.argmax(self.density)])

    def local_maxima(self, min_density: float = 0.0):
        """Bin centers that are strict local maxima (plateaus count once)."""
        d = self.density
        out = []
        i = 0
        n = len(d)
        while i < n:
            j = i
            while j + 1 < n and d[j + 1] == d[i]:
                j += 1
            left = d[i - 1] if i > 0 else -np.inf
            right = d[j + 1] if j + 1 < n else -np.inf
            if d[i] > left and d[i] > right and d[i] > min_density:
                out.append(float(self.centers[(i + j) // 2]))
            i = j + 1
        return out

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_center", "density"])
            for c, d in zip(self.centers, self.density):
                writer.writerow([repr(float(c)), repr(float(d))])
