"""Flow and depth evaluation metrics (KITTI conventions)."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


class EmptyEvaluationError(ValueError):
    pass


@dataclass
class FlowEval:
    epe_all: float
    epe_noc: Optional[float]
    epe_occ: Optional[float]
    fl_all: float
    fl_noc: Optional[float]
    fl_occ: Optional[float]
    n_all: int
    n_noc: int
    n_occ: int

    def as_dict(self):
        return asdict(self)


@dataclass
class DepthEval:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n: int

    def as_dict(self):
        return asdict(self)


def _mask(m, shape):
    if m is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(m)
    if m.ndim == 3:
        m = m[..., 0]
    return m > 0


def flow_metrics(pred, gt, valid=None, noc=None) -> FlowEval:
    """End-point error and Fl outlier rate, optionally split by a non-occluded mask.

    A pixel is an outlier when its error exceeds 3 px and 5 % of the ground
    truth magnitude.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and ground truth differ: {pred.shape} vs {gt.shape}")
    valid = _mask(valid, gt.shape[:2])
    epe = np.sqrt(np.sum((pred - gt) ** 2, axis=-1))
    mag = np.sqrt(np.sum(gt ** 2, axis=-1))
    wrong = (epe > 3.0) & (epe > 0.05 * mag)
    if not valid.any():
        raise EmptyEvaluationError("no valid ground-truth pixels")

    def split(sel):
        n = int(sel.sum())
        if n == 0:
            return None, None, 0
        return float(epe[sel].mean()), float(wrong[sel].mean()), n

    e_all, f_all, n_all = split(valid)
    if noc is None:
        return FlowEval(e_all, None, None, f_all, None, None, n_all, 0, 0)
    noc = _mask(noc, gt.shape[:2])
    e_noc, f_noc, n_noc = split(valid & noc)
    e_occ, f_occ, n_occ = split(valid & ~noc)
    return FlowEval(e_all, e_noc, e_occ, f_all, f_noc, f_occ, n_all, n_noc, n_occ)


def disparity_to_depth(disp, fb: float, eps: float = 1e-6) -> np.ndarray:
    if fb <= 0:
        raise ValueError("fb must be positive")
    return fb / np.maximum(np.abs(disp), eps)


def garg_crop(h: int, w: int):
    """Evaluation crop rectangle (top, bottom, left, right) used on the Eigen split."""
    return (int(0.40810811 * h), int(0.99189189 * h), int(0.03594771 * w), int(0.96405229 * w))


def depth_metrics(pred_disp, gt_depth, fb: float, valid=None, cap=(1e-3, 80.0),
                  crop: Optional[tuple] = None) -> DepthEval:
    """Standard depth error metrics for a predicted disparity map.

    ``pred_disp`` is either an (H, W) disparity or an (H, W, 2) correspondence
    field whose horizontal channel is used.  Pixels with ground truth
    ``<= 0`` or outside ``valid``/``crop`` are ignored.
    """
    if fb <= 0:
        raise ValueError("fb must be positive")
    d = np.asarray(pred_disp, dtype=np.float64)
    if d.ndim == 3:
        d = d[..., 0]
    gt = np.asarray(gt_depth, dtype=np.float64)
    if gt.ndim == 3:
        gt = gt[..., 0]
    sel = _mask(valid, gt.shape) & np.isfinite(gt) & (gt > 0)
    if crop is not None:
        t, b, l, r = crop
        box = np.zeros_like(sel)
        box[t:b, l:r] = True
        sel &= box
    if not sel.any():
        raise EmptyEvaluationError("no valid ground-truth pixels")
    lo, hi = cap
    pred = np.clip(disparity_to_depth(d[sel], fb), lo, hi)
    gt = np.clip(gt[sel], lo, hi)
    ratio = np.maximum(gt / pred, pred / gt)
    return DepthEval(
        abs_rel=float(np.mean(np.abs(gt - pred) / gt)),
        sq_rel=float(np.mean((gt - pred) ** 2 / gt)),
        rmse=float(np.sqrt(np.mean((gt - pred) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(gt) - np.log(pred)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        n=int(sel.sum()),
    )


def stereo_vertical_diagnostic(d) -> float:
    """Mean |v| of a stereo correspondence field."""
    return float(np.mean(np.abs(np.asarray(d, dtype=np.float64)[..., 1])))
