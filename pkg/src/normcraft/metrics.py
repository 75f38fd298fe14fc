"""Angular error metrics, Chamfer distance, CND relabeling and PGP/AUC curves.

Angles are computed in radians and reported in degrees.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError
from .pointcloud import NeighborIndex, PointCloud

DEFAULT_THRESHOLDS = np.arange(0.0, 91.0)
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class AngularErrorSet:
    errors: np.ndarray
    thresholds: np.ndarray = field(default_factory=lambda: DEFAULT_THRESHOLDS.copy())

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=np.float64).reshape(-1)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64).reshape(-1)
        if np.any(np.diff(self.thresholds) <= 0):
            raise StructuralError("PGP thresholds must be strictly ascending")


@dataclass
class EvalReport:
    rmse: float = None
    cnd: float = None
    msae: float = None
    pgp: list = field(default_factory=list)
    auc: float = None
    count: int = 0


def _as_unit(v, what):
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1)
    if np.any(norms == 0):
        raise StructuralError(f"{what}: zero-norm vector")
    return v, norms


def angular_errors(n_true, n_pred, oriented=False):
    """Per-row angle in degrees between two ``(m, 3)`` arrays of unit vectors.

    Uses ``atan2(|a x b|, a . b)``, which keeps full precision near 0 where
    ``arccos`` of the dot product bottoms out around 1e-6 degrees.
    """
    a, na = _as_unit(n_true, "n_true")
    b, nb = _as_unit(n_pred, "n_pred")
    if a.shape != b.shape:
        raise StructuralError(f"normal arrays differ in shape: {a.shape} vs {b.shape}")
    a, b = a / na[..., None], b / nb[..., None]
    dot = np.sum(a * b, axis=-1)
    sine = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.degrees(np.arctan2(sine, dot if oriented else np.abs(dot)))


def angular_error(n_true, n_pred, oriented=False):
    """Angle in degrees between two vectors; unoriented (sign-insensitive, in [0, 90]) by default."""
    a = np.asarray(n_true, dtype=np.float64).reshape(1, 3)
    b = np.asarray(n_pred, dtype=np.float64).reshape(1, 3)
    return float(angular_errors(a, b, oriented)[0])


def rmse_angle(errors):
    e = errors.errors if isinstance(errors, AngularErrorSet) else np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise StructuralError("RMSE of an empty error set")
    return float(np.sqrt(np.mean(e * e)))


def _points(c):
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64).reshape(-1, 3)


def chamfer_distance(A, B):
    """Mean squared nearest-neighbor distance from A to B plus from B to A."""
    a, b = _points(A), _points(B)
    if len(a) == 0 or len(b) == 0:
        raise StructuralError("Chamfer distance of an empty cloud")
    _, d_ab = NeighborIndex(b).query(a, 1)
    _, d_ba = NeighborIndex(a).query(b, 1)
    return float(d_ab.mean() + d_ba.mean())


def cnd_relabel(noisy, clean, clean_index=None):
    """Normal of each noisy point's nearest clean point."""
    if clean.normals is None:
        raise StructuralError(f"{clean.name}: clean cloud has no normals to relabel from")
    index = NeighborIndex(clean) if clean_index is None else clean_index
    idx, _ = index.query(_points(noisy), 1)
    return clean.normals[idx[:, 0]].copy()


def _check_pred(noisy, predicted):
    pred = np.asarray(predicted, dtype=np.float64).reshape(-1, 3)
    if len(pred) != len(noisy):
        raise StructuralError(f"{len(pred)} predictions for {len(noisy)} points")
    return pred


def cnd(noisy, clean, predicted, oriented=False, clean_index=None):
    """Angular RMSE (degrees) against the CND labels."""
    pred = _check_pred(noisy, predicted)
    labels = cnd_relabel(noisy, clean, clean_index)
    return rmse_angle(angular_errors(labels, pred, oriented))


def msae_errors(noisy, clean, predicted, k=4, oriented=False, clean_index=None):
    """Per point, the smallest angular error over the k nearest clean normals."""
    pred = _check_pred(noisy, predicted)
    if clean.normals is None:
        raise StructuralError(f"{clean.name}: clean cloud has no normals")
    if k < 1 or k > len(clean):
        raise StructuralError(f"MSAE k={k} outside [1, {len(clean)}]")
    index = NeighborIndex(clean) if clean_index is None else clean_index
    idx, _ = index.query(_points(noisy), k)
    cand = clean.normals[idx]
    errs = angular_errors(cand.reshape(-1, 3), np.repeat(pred, k, axis=0), oriented).reshape(-1, k)
    return errs.min(axis=1)


def msae(noisy, clean, predicted, k=4, oriented=False, clean_index=None):
    return rmse_angle(msae_errors(noisy, clean, predicted, k, oriented, clean_index))


def pgp_curve(errors, thresholds=None):
    """Fraction of errors strictly below each threshold.

    At a threshold of 0 the curve takes its right limit, the fraction of
    exactly-zero errors, so a perfect estimator scores 1 everywhere.
    """
    e = np.sort(np.asarray(errors.errors if isinstance(errors, AngularErrorSet) else errors, dtype=np.float64))
    if e.size == 0:
        raise StructuralError("PGP of an empty error set")
    t = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    below = np.searchsorted(e, t, side="left")
    at_zero = np.searchsorted(e, t, side="right")
    return np.where(t <= 0, at_zero, below) / e.size


def pgp_auc(errors, thresholds=None):
    """PGP table and the trapezoid area under it over ``[0, t_max]``, divided by ``t_max``."""
    if isinstance(errors, AngularErrorSet):
        thresholds = errors.thresholds if thresholds is None else thresholds
    t = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    frac = pgp_curve(errors, t)
    xs, ys = t, frac
    if t[0] > 0:
        xs = np.concatenate([[0.0], t])
        ys = np.concatenate([pgp_curve(errors, [0.0]), frac])
    auc = float(_trapezoid(ys, xs) / xs[-1])
    count = len(errors.errors) if isinstance(errors, AngularErrorSet) else int(np.size(errors))
    return EvalReport(pgp=list(zip(t.tolist(), frac.tolist())), auc=auc, count=count)


def evaluate(predicted, noisy, clean=None, annotated=None, msae_k=4, oriented=False, thresholds=None):
    """Full report: RMSE vs annotated normals, CND and MSAE vs the clean cloud, PGP/AUC on the CND errors."""
    pred = _check_pred(noisy, predicted)
    rep = EvalReport(count=len(pred))
    if annotated is not None:
        rep.rmse = rmse_angle(angular_errors(annotated, pred, oriented))
    curve_errors = None
    if clean is not None:
        index = NeighborIndex(clean)
        labels = cnd_relabel(noisy, clean, index)
        curve_errors = angular_errors(labels, pred, oriented)
        rep.cnd = rmse_angle(curve_errors)
        if len(clean) >= msae_k:
            rep.msae = msae(noisy, clean, pred, msae_k, oriented, index)
    elif annotated is not None:
        curve_errors = angular_errors(annotated, pred, oriented)
    if curve_errors is None:
        raise StructuralError("evaluation needs a clean cloud with normals or annotated normals")
    frag = pgp_auc(curve_errors, thresholds)
    rep.pgp, rep.auc = frag.pgp, frag.auc
    return rep
