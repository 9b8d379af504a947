"""Scale/shift-aligned depth metrics, angular normal metrics, temporal
profiles, and direction-aware rank tables.

Alignment fits one global (s, b) per sequence by least squares over every
valid pixel jointly, making the protocol invariant to the predictor's affine
frame. Fitting happens in disparity space by default (predictions are
disparity; ground-truth depth is inverted first); metrics are then computed
in metric depth, with RMSE reported in centimeters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

DELTA_THRESHOLDS = (1.05, 1.10, 1.25)
ANGLE_THRESHOLDS_DEG = (11.25, 22.5, 30.0)
_MIN_DISPARITY = 1e-6


@dataclass
class AlignmentResult:
    scale: float
    shift: float
    residual_rms: float
    n_pixels: int
    degenerate: bool = False


def align_scale_shift(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray
                      ) -> tuple[AlignmentResult, np.ndarray]:
    """Least-squares (s, b) minimizing sum((s*pred + b - gt)^2) over the mask.

    Solved from the closed-form 2x2 normal equations in float64. A constant
    prediction is degenerate: s = 0 with a warning, b = mean(gt).
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise DataError("alignment: empty mask")
    p = pred[mask].astype(np.float64)
    g = gt[mask].astype(np.float64)
    sp = p.sum()
    spp = (p * p).sum()
    sg = g.sum()
    spg = (p * g).sum()
    det = spp * n - sp * sp
    var = spp / n - (sp / n) ** 2
    if var < 1e-12 or det <= 0:
        warnings.warn("alignment: constant prediction, falling back to s=0")
        s, b = 0.0, sg / n
        degenerate = True
    else:
        s = (spg * n - sp * sg) / det
        b = (sg - s * sp) / n
        degenerate = False
    aligned = s * pred.astype(np.float64) + b
    rms = float(np.sqrt(np.mean((aligned[mask] - g) ** 2)))
    return (AlignmentResult(scale=float(s), shift=float(b), residual_rms=rms,
                            n_pixels=n, degenerate=degenerate),
            aligned)


@dataclass
class SequenceMetrics:
    seq_id: str
    rel: float                 # percent
    rmse_cm: float
    deltas: dict[float, float]  # threshold -> percent
    n_pixels: int
    alignment: AlignmentResult | None = None


@dataclass
class MetricsReport:
    per_sequence: list[SequenceMetrics] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def mean(self, attr: str):
        if not self.per_sequence:
            raise DataError("metrics report is empty")
        if attr == "deltas":
            return {a: float(np.mean([s.deltas[a] for s in self.per_sequence]))
                    for a in DELTA_THRESHOLDS}
        return float(np.mean([getattr(s, attr) for s in self.per_sequence]))

    def summary(self) -> dict:
        d = self.mean("deltas")
        return {"REL": self.mean("rel"), "RMSE_cm": self.mean("rmse_cm"),
                **{f"delta_{a}": d[a] for a in DELTA_THRESHOLDS},
                "sequences": len(self.per_sequence), "skipped": len(self.skipped)}


def depth_metrics(aligned_depth: np.ndarray, gt_depth: np.ndarray,
                  mask: np.ndarray, seq_id: str = "") -> SequenceMetrics:
    """REL/RMSE/delta on already-aligned metric depth over the mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError(f"depth_metrics: empty mask for {seq_id!r}")
    p = aligned_depth[mask].astype(np.float64)
    g = gt_depth[mask].astype(np.float64)
    rel = float(np.mean(np.abs(p - g) / g) * 100.0)
    rmse_cm = float(np.sqrt(np.mean((p - g) ** 2)) * 100.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
        ratio = np.where(np.isfinite(ratio), ratio, np.inf)
    deltas = {a: float((ratio < a).mean() * 100.0) for a in DELTA_THRESHOLDS}
    return SequenceMetrics(seq_id=seq_id, rel=rel, rmse_cm=rmse_cm, deltas=deltas,
                           n_pixels=int(mask.sum()))


def range_mask(gt_depth: np.ndarray, valid: np.ndarray,
               near: float | None = None, far: float | None = None) -> np.ndarray:
    """Validity AND optional [near, far] metric range on the ground truth."""
    mask = np.asarray(valid, dtype=bool) & (gt_depth > 0)
    if near is not None:
        mask &= gt_depth >= near
    if far is not None:
        mask &= gt_depth <= far
    return mask


def evaluate_depth_sequence(pred_disparity: np.ndarray, gt_depth: np.ndarray,
                            valid: np.ndarray, seq_id: str = "",
                            near: float | None = None, far: float | None = None,
                            align_space: str = "disparity") -> SequenceMetrics:
    """Full protocol for one sequence: mask, global alignment, depth metrics."""
    mask = range_mask(gt_depth, valid, near, far)
    if not mask.any():
        raise DataError(f"evaluate: no pixels survive masking for {seq_id!r}")
    if align_space == "disparity":
        gt_disp = np.zeros_like(gt_depth, dtype=np.float64)
        gt_disp[mask] = 1.0 / gt_depth[mask].astype(np.float64)
        align, aligned_disp = align_scale_shift(pred_disparity, gt_disp, mask)
        aligned_depth = 1.0 / np.clip(aligned_disp, _MIN_DISPARITY, None)
    elif align_space == "depth":
        align, aligned_depth = align_scale_shift(pred_disparity, gt_depth, mask)
        aligned_depth = np.clip(aligned_depth, 1e-6, None)
    else:
        raise DataError(f"unknown alignment space {align_space!r}")
    m = depth_metrics(aligned_depth, gt_depth, mask, seq_id=seq_id)
    m.alignment = align
    return m


def best_constant_disparity_rel(gt_depth: np.ndarray, mask: np.ndarray) -> float:
    """REL (percent) of the best constant-disparity predictor for a sequence.

    After alignment a constant prediction collapses to one free depth value,
    so the oracle is min over constants c of mean(|c - g| / g): the weighted
    median of depth with weights 1/g.
    """
    g = np.sort(gt_depth[np.asarray(mask, dtype=bool)].astype(np.float64))
    if g.size == 0:
        raise DataError("constant baseline: empty mask")
    w = 1.0 / g
    cw = np.cumsum(w)
    k = int(np.searchsorted(cw, cw[-1] / 2.0))
    best = g[min(k, g.size - 1)]
    return float(np.mean(np.abs(best - g) / g) * 100.0)


@dataclass
class NormalReport:
    mean_deg: float
    median_deg: float
    inliers: dict[float, float]      # threshold degrees -> percent
    n_pixels: int
    renormalized_fraction: float = 0.0


def _lower_median(sorted_vals: np.ndarray) -> float:
    n = sorted_vals.size
    return float(sorted_vals[(n - 1) // 2])


def normal_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray
                   ) -> NormalReport:
    """Angular error statistics between unit normal maps over the mask.

    Non-unit inputs are renormalized with a warning; zero vectors are dropped
    from the statistics. Median uses the lower-median rule for even counts.
    """
    mask = np.asarray(mask, dtype=bool)
    p = pred[mask].astype(np.float64)
    g = gt[mask].astype(np.float64)
    pn = np.linalg.norm(p, axis=-1)
    gn = np.linalg.norm(g, axis=-1)
    nonzero = (pn > 1e-6) & (gn > 1e-6)
    renorm = 0.0
    if nonzero.any():
        off_unit = (np.abs(pn[nonzero] - 1.0) > 1e-3) | (np.abs(gn[nonzero] - 1.0) > 1e-3)
        renorm = float(off_unit.mean())
        if renorm > 0:
            warnings.warn(f"normal_metrics: renormalizing {renorm:.1%} non-unit vectors")
    p = p[nonzero] / pn[nonzero, None]
    g = g[nonzero] / gn[nonzero, None]
    if p.shape[0] == 0:
        raise DataError("normal_metrics: no usable pixels")
    dot = np.clip(np.sum(p * g, axis=-1), -1.0, 1.0)
    ang = np.degrees(np.arccos(dot))
    ang_sorted = np.sort(ang)
    return NormalReport(
        mean_deg=float(ang.mean()),
        median_deg=_lower_median(ang_sorted),
        inliers={a: float((ang < a).mean() * 100.0) for a in ANGLE_THRESHOLDS_DEG},
        n_pixels=int(p.shape[0]),
        renormalized_fraction=renorm)


def temporal_profile(video: np.ndarray, row: int) -> np.ndarray:
    """Stack one pixel row from every frame into a time x width image."""
    if not 0 <= row < video.shape[1]:
        raise DataError(f"profile row {row} outside height {video.shape[1]}")
    return np.asarray(video)[:, row, :].copy()


def profile_jitter(profile: np.ndarray) -> float:
    """RMS frame-to-frame difference of a temporal profile."""
    if profile.shape[0] < 2:
        return 0.0
    d = np.diff(profile.astype(np.float64), axis=0)
    return float(np.sqrt(np.mean(d * d)))


# metric name -> True when higher is better
METRIC_DIRECTIONS = {"REL": False, "RMSE_cm": False,
                     "delta_1.05": True, "delta_1.1": True, "delta_1.25": True}


def rank_methods(table: dict[str, dict[str, float]],
                 directions: dict[str, bool] | None = None) -> dict[str, float]:
    """Average direction-aware rank per method; ties share the mean rank."""
    if len(table) < 2:
        raise DataError("ranking needs at least two methods")
    directions = directions or METRIC_DIRECTIONS
    methods = sorted(table)
    metrics = sorted({m for row in table.values() for m in row})
    ranks = {m: [] for m in methods}
    for metric in metrics:
        higher_better = directions.get(metric, False)
        vals = np.array([table[m][metric] for m in methods], dtype=np.float64)
        keyed = -vals if higher_better else vals
        order = np.argsort(keyed, kind="stable")
        rank = np.empty(len(methods))
        i = 0
        pos = 1.0
        while i < len(methods):
            j = i
            while j + 1 < len(methods) and keyed[order[j + 1]] == keyed[order[i]]:
                j += 1
            shared = (pos + (pos + (j - i))) / 2.0
            for k in range(i, j + 1):
                rank[order[k]] = shared
            pos += j - i + 1
            i = j + 1
        for mi, m in enumerate(methods):
            ranks[m].append(rank[mi])
    return {m: float(np.mean(r)) for m, r in ranks.items()}
