"""2-D scatter rendering of a feature matrix via power-iteration PCA.

Output is a self-contained SVG with one ``circle`` element per entity;
flagged anomalies carry the ``anomaly`` class so they can be counted and
styled.  No plotting dependency: determinism down to the byte matters more
than prettiness here.
"""

from __future__ import annotations

import numpy as np

from .features import FeatureMatrix
from .ranking import AnomalyRanking

POWER_ITERATIONS = 100


class DegenerateProjectionError(Exception):
    """Fewer than two informative directions in the data."""


def _power_iterate(C: np.ndarray) -> tuple[np.ndarray, float]:
    n = C.shape[0]
    v = 1.0 / np.arange(1.0, n + 1.0)  # deterministic, generic start
    v /= np.linalg.norm(v)
    for _ in range(POWER_ITERATIONS):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        v = w / norm
    return v, float(v @ C @ v)


def principal_plane(matrix: FeatureMatrix) -> np.ndarray:
    """Project onto the top two principal components (m x 2)."""
    if not matrix.normalized:
        raise ValueError("expected a normalized feature matrix")
    X = matrix.values
    if np.count_nonzero(X.std(axis=0) > 0) < 2:
        raise DegenerateProjectionError("fewer than 2 non-constant columns")
    C = X.T @ X / X.shape[0]
    v1, lam1 = _power_iterate(C)
    C2 = C - lam1 * np.outer(v1, v1)
    v2, lam2 = _power_iterate(C2)
    if lam2 <= 1e-9 * max(lam1, 1.0):
        raise DegenerateProjectionError("second principal component is degenerate")
    v2 = v2 - (v2 @ v1) * v1
    v2 /= np.linalg.norm(v2)
    return X @ np.column_stack([v1, v2])


def render_scatter(matrix: FeatureMatrix, ranking: AnomalyRanking, path) -> None:
    """Write an SVG scatter of the first two principal components with the
    ranking's flagged entities marked."""
    coords = principal_plane(matrix)
    flagged_ids = set(ranking.top_ids(ranking.flagged_count))
    width = height = 640.0
    pad = 20.0
    lo = coords.min(axis=0)
    span = coords.max(axis=0) - lo
    span[span == 0] = 1.0
    scaled = (coords - lo) / span * (width - 2 * pad) + pad
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        "<style>.pt{fill:#4477aa;opacity:0.55}.anomaly{fill:#cc3311;opacity:0.95}</style>",
    ]
    for ent, (x, y) in zip(matrix.entity_ids, scaled):
        cls = "pt anomaly" if ent in flagged_ids else "pt"
        cy = height - y  # flip so larger second component points up
        lines.append(f'<circle class="{cls}" cx="{x:.3f}" cy="{cy:.3f}" r="3"/>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
