"""Saliency evaluation measures and dataset-level reporting.

All four measures operate on a continuous prediction in [0,1] and a binary
mask of the same shape:

* ``mae`` - mean absolute pixel difference.
* ``f_measure`` - precision/recall F-score (beta^2 = 0.3) swept over the 256
  thresholds t/255; reports the mean and the max over the sweep.
* ``weighted_f`` - the dependency-weighted F-score: false negatives inside
  the mask are smoothed with a 7x7 sigma-5 Gaussian of the error field (with
  background errors first replaced by the error at the nearest foreground
  pixel), false positives are down-weighted toward the mask by an
  exponentially decaying importance, and the weighted precision/recall
  combine with beta^2 = 1. Returns 0 when the mask has no foreground.
* ``e_measure`` - the enhanced alignment measure: the prediction is
  binarized at min(2*mean, 1), both maps are mean-centered, and the
  per-pixel alignment 2*phi_s*phi_g / (phi_s^2 + phi_g^2) (0 where the
  denominator vanishes) is mapped through ((xi+1)^2)/4 and averaged. An
  all-background mask scores 1 - mean(binarized s); an all-foreground mask
  scores mean(binarized s).

Dataset-level values are means of the per-sample values; the F-measure
aggregates the per-sample threshold curves first and takes mean/max of the
averaged curve, so the reported max-F is the best single threshold for the
whole dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "mae",
    "f_measure",
    "f_measure_curve",
    "weighted_f",
    "e_measure",
    "MetricReport",
    "evaluate_samples",
    "report_csv",
    "report_table",
]

FB_BETA2 = 0.3
N_THRESHOLDS = 256
_EPS = float(np.finfo(np.float64).eps)


def _check_pair(s: np.ndarray, g: np.ndarray, op: str) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if s.shape != g.shape:
        raise DimensionError(f"{op}: prediction {s.shape} and mask {g.shape} differ")
    return s, g


def mae(s: np.ndarray, g: np.ndarray) -> float:
    s, g = _check_pair(s, g, "mae")
    return float(np.mean(np.abs(s - g)))


def f_measure_curve(s: np.ndarray, g: np.ndarray, beta2: float = FB_BETA2) -> np.ndarray:
    """F-score at every threshold t/255 (binarization is s >= t/255)."""
    s, g = _check_pair(s, g, "f_measure")
    # bucket b = floor(255*s); s >= t/255 <=> b >= t for integer t
    buckets = np.floor(s * 255.0).astype(np.int64).clip(0, 255)
    fg = g > 0.5
    hist_fg = np.bincount(buckets[fg].reshape(-1), minlength=256)
    hist_bg = np.bincount(buckets[~fg].reshape(-1), minlength=256)
    tp = np.cumsum(hist_fg[::-1])[::-1].astype(np.float64)   # predictions >= t inside mask
    fp = np.cumsum(hist_bg[::-1])[::-1].astype(np.float64)
    n_fg = float(fg.sum())
    pred_pos = tp + fp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_pos > 0, tp / pred_pos, 0.0)
        recall = np.where(n_fg > 0, tp / max(n_fg, 1.0), 0.0)
        num = (1.0 + beta2) * precision * recall
        den = beta2 * precision + recall
        f = np.where(den > 0, num / den, 0.0)
    return f


def f_measure(s: np.ndarray, g: np.ndarray, beta2: float = FB_BETA2) -> tuple[float, float]:
    """(mean, max) F-score over the 256-threshold sweep."""
    curve = f_measure_curve(s, g, beta2)
    return float(curve.mean()), float(curve.max())


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = size // 2
    xs = np.arange(size) - half
    k = np.exp(-(xs[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter2d_zero(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate with zero padding ('same' size)."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((img.shape[0] + 2 * ph, img.shape[1] + 2 * pw))
    padded[ph:ph + img.shape[0], pw:pw + img.shape[1]] = img
    out = np.zeros_like(img)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i:i + img.shape[0], j:j + img.shape[1]]
    return out


def _nearest_foreground(fg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per background pixel: Euclidean distance to and flat index of the
    nearest foreground pixel (ties broken by smallest row-major index)."""
    h, w = fg.shape
    fg_idx = np.flatnonzero(fg.reshape(-1))
    bg_idx = np.flatnonzero(~fg.reshape(-1))
    fy, fx = np.divmod(fg_idx, w)
    by, bx = np.divmod(bg_idx, w)
    dist = np.zeros(h * w)
    nearest = np.arange(h * w)
    if fg_idx.size and bg_idx.size:
        chunk = max(1, int(4e6) // max(1, fg_idx.size))
        for start in range(0, bg_idx.size, chunk):
            sl = slice(start, start + chunk)
            d2 = (by[sl, None] - fy[None, :]) ** 2 + (bx[sl, None] - fx[None, :]) ** 2
            best = d2.argmin(axis=1)  # first minimum = smallest row-major fg index
            dist[bg_idx[sl]] = np.sqrt(d2[np.arange(best.size), best])
            nearest[bg_idx[sl]] = fg_idx[best]
    return dist.reshape(h, w), nearest.reshape(h, w)


def weighted_f(s: np.ndarray, g: np.ndarray) -> float:
    s, g = _check_pair(s, g, "weighted_f")
    if s.ndim != 2:
        s = s.reshape(s.shape[-2], s.shape[-1])
        g = g.reshape(g.shape[-2], g.shape[-1])
    fg = g > 0.5
    if not fg.any():
        return 0.0
    err = np.abs(s - fg.astype(np.float64))
    dist, nearest = _nearest_foreground(fg)
    err_t = err.copy()
    err_t[~fg] = err.reshape(-1)[nearest[~fg]]
    smoothed = _filter2d_zero(err_t, _gaussian_kernel())
    min_err = np.where(fg & (smoothed < err), smoothed, err)
    importance = np.ones_like(err)
    importance[~fg] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[~fg])
    weighted_err = min_err * importance
    n_fg = float(fg.sum())
    tp_w = n_fg - weighted_err[fg].sum()
    fp_w = weighted_err[~fg].sum()
    recall = 1.0 - weighted_err[fg].mean()
    precision = tp_w / (_EPS + tp_w + fp_w)
    return float(2.0 * precision * recall / (_EPS + precision + recall))


def _adaptive_binarize(s: np.ndarray) -> np.ndarray:
    return s >= min(2.0 * float(s.mean()), 1.0)


def e_measure(s: np.ndarray, g: np.ndarray) -> float:
    s, g = _check_pair(s, g, "e_measure")
    fg = g > 0.5
    s_bin = _adaptive_binarize(s).astype(np.float64)
    if not fg.any():
        return float(1.0 - s_bin.mean())
    if fg.all():
        return float(s_bin.mean())
    phi_s = s_bin - s_bin.mean()
    phi_g = fg.astype(np.float64) - fg.mean()
    den = phi_s * phi_s + phi_g * phi_g
    with np.errstate(invalid="ignore", divide="ignore"):
        xi = np.where(den > 0, 2.0 * phi_s * phi_g / np.where(den > 0, den, 1.0), 0.0)
    enhanced = (xi + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


# ---------------------------------------------------------------------------
# dataset-level reporting
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Aggregate measures, optionally split per challenge label."""

    e_measure: float
    weighted_f: float
    f_mean: float
    f_max: float
    mae: float
    count: int
    per_challenge: dict[str, "MetricReport"] = field(default_factory=dict)

    def values(self) -> tuple[float, float, float, float, float]:
        return (self.e_measure, self.weighted_f, self.f_mean, self.f_max, self.mae)


def _aggregate(es, wfs, curves, maes) -> tuple[float, float, float, float, float]:
    curve = np.mean(np.stack(curves), axis=0)
    return (
        float(np.mean(es)),
        float(np.mean(wfs)),
        float(curve.mean()),
        float(curve.max()),
        float(np.mean(maes)),
    )


def evaluate_samples(preds, gts, labels=None) -> MetricReport:
    """Compute the report over aligned prediction/mask streams.

    ``labels`` is an optional aligned sequence of label sets; when present,
    a sub-report is computed over the subset carrying each label (samples
    with several labels count in each subset).
    """
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise ContractError(f"got {len(preds)} predictions but {len(gts)} masks")
    if not preds:
        raise ContractError("cannot evaluate an empty dataset")
    if labels is not None:
        labels = [set(l) for l in labels]
        if len(labels) != len(preds):
            raise ContractError(f"got {len(labels)} label sets but {len(preds)} predictions")

    es, wfs, curves, maes = [], [], [], []
    for s, g in zip(preds, gts):
        es.append(e_measure(s, g))
        wfs.append(weighted_f(s, g))
        curves.append(f_measure_curve(s, g))
        maes.append(mae(s, g))

    overall = MetricReport(*_aggregate(es, wfs, curves, maes), count=len(preds))
    if labels is not None:
        all_labels = sorted(set().union(*labels)) if labels else []
        for label in all_labels:
            idx = [i for i, ls in enumerate(labels) if label in ls]
            overall.per_challenge[label] = MetricReport(
                *_aggregate([es[i] for i in idx], [wfs[i] for i in idx],
                            [curves[i] for i in idx], [maes[i] for i in idx]),
                count=len(idx),
            )
    return overall


_COLUMNS = ("e_measure", "weighted_f", "f_mean", "f_max", "mae")


def report_csv(report: MetricReport, method: str, dataset: str) -> str:
    """CSV with one row per (overall + challenge subset)."""
    lines = ["method,dataset,subset,count," + ",".join(_COLUMNS)]

    def row(name, rep):
        vals = ",".join(repr(v) for v in rep.values())
        lines.append(f"{method},{dataset},{name},{rep.count},{vals}")

    row("all", report)
    for label in sorted(report.per_challenge):
        row(label, report.per_challenge[label])
    return "\n".join(lines) + "\n"


def report_table(report: MetricReport, method: str, dataset: str) -> str:
    """Aligned plain-text table mirroring the usual benchmark layout."""
    headers = ["method", "dataset", "subset", "n"] + list(_COLUMNS)
    rows = [[method, dataset, "all", str(report.count)]
            + [f"{v:.4f}" for v in report.values()]]
    for label in sorted(report.per_challenge):
        rep = report.per_challenge[label]
        rows.append([method, dataset, label, str(rep.count)]
                    + [f"{v:.4f}" for v in rep.values()])
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*headers), fmt.format(*["-" * w for w in widths])]
    out += [fmt.format(*r) for r in rows]
    return "\n".join(out) + "\n"
