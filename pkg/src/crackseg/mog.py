"""Class-conditional Mixtures of Gaussians over pixel features.

Each training image contributes one diagonal Gaussian per class (crack,
background), seeded from the current model prediction and refined by EM on
that image's pixels:

    E-step:  r_ik ∝ w_k |S_k|^{-1/2} exp(-(x_i - m_k)^T S_k^{-1} (x_i - m_k) / 2)
    M-step:  w_k = sum_i r_ik / N
             m_k = sum_i r_ik x_i / sum_i r_ik
             S_k = sum_i r_ik (x_i - m_k)(x_i - m_k)^T / sum_i r_ik   (diagonal)

The per-image Gaussians are pooled into two class-level mixtures whose
component weights are proportional to each image's pixel mass for the class.
Pseudo-labels are the per-pixel MAP class under the two-mixture posterior
with equal class priors; everything runs in the log domain.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
COLLAPSE_WEIGHT = 1e-6
MIN_PARTITION = 32      # pixels needed before a crack component is emitted
MAX_FIT_POINTS = 20000
CRACK, BACKGROUND = "crack", "background"


@dataclass
class GaussianComponent:
    mean: np.ndarray    # (D,)
    var: np.ndarray     # (D,) per-dimension variances, floored
    weight: float
    image_id: str = ""


@dataclass
class ClassMixture:
    components: list[GaussianComponent]
    class_id: str


@dataclass
class MoGModel:
    crack: ClassMixture
    background: ClassMixture


@dataclass
class EmFit:
    components: list[GaussianComponent]
    log_likelihood: list[float]   # one entry per iteration, non-decreasing
    kept: list[int]               # input indices of the surviving components
    soft_counts: np.ndarray       # final responsibility mass per component
    n_points: int


@dataclass
class ImageFit:
    """One image's per-class Gaussians plus the pixel mass behind each."""
    image_id: str
    background: GaussianComponent
    crack: GaussianComponent | None
    background_mass: float
    crack_mass: float


@dataclass
class PseudoLabels:
    mask: np.ndarray          # (H, W) bool, MAP class per pixel
    confidence: np.ndarray    # (H, W) max posterior
    degenerate: bool          # True when the crack mixture was empty


def _log_density(points: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """log N(x; m, diag(v)) for every point/component pair, shape (N, K)."""
    d = points.shape[1]
    inv = 1.0 / variances                                     # (K, D)
    maha = (points * points) @ inv.T - 2.0 * points @ (means * inv).T \
        + np.sum(means * means * inv, axis=1)
    log_norm = d * np.log(2.0 * np.pi) + np.sum(np.log(variances), axis=1)
    return -0.5 * (log_norm + maha)


def responsibilities(points: np.ndarray, components: list[GaussianComponent]) -> tuple[np.ndarray, float]:
    """E-step: per-point component posteriors and the total log-likelihood.

    Rows where every component underflows to log-zero fall back to uniform
    responsibilities and contribute nothing to the log-likelihood.
    """
    means = np.stack([c.mean for c in components])
    variances = np.stack([c.var for c in components])
    weights = np.array([c.weight for c in components])
    with np.errstate(divide="ignore"):
        joint = np.log(weights) + _log_density(points, means, variances)
    norm = logsumexp(joint, axis=1, keepdims=True)
    dead = ~np.isfinite(norm[:, 0])
    resp = np.exp(joint - np.where(norm == -np.inf, 0.0, norm))
    if dead.any():
        resp[dead] = 1.0 / len(components)
    ll = float(norm[~dead].sum())
    return resp, ll


def _m_step(points: np.ndarray, resp: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n = points.shape[0]
    nk = resp.sum(axis=0)
    weights = nk / n
    safe = np.maximum(nk, 1e-300)[:, None]
    means = (resp.T @ points) / safe
    ex2 = (resp.T @ (points * points)) / safe
    variances = np.maximum(ex2 - means * means, VAR_FLOOR)
    return weights, means, variances, nk


def em_fit(points: np.ndarray, components: list[GaussianComponent],
           max_iter: int = 20, tol: float = 1e-4) -> EmFit:
    """Fit a diagonal-covariance mixture to points by EM.

    The log-likelihood trace is non-decreasing by construction: should a
    floored or pruned update ever lower it, the update is rolled back and
    iteration stops. Components whose weight collapses below 1e-6 are
    removed (and the event logged).
    """
    if not components:
        raise ValueError("em_fit needs at least one component")
    points = np.asarray(points, dtype=np.float64)
    total_w = sum(c.weight for c in components)
    comps = [replace(c, mean=np.array(c.mean, dtype=np.float64),
                     var=np.maximum(np.array(c.var, dtype=np.float64), VAR_FLOOR),
                     weight=(c.weight / total_w if total_w > 0 else 1.0 / len(components)))
             for c in components]
    kept = list(range(len(components)))
    resp, ll = responsibilities(points, comps)
    trace = [ll]
    soft_counts = resp.sum(axis=0)

    for _ in range(max_iter):
        snapshot = ([replace(c) for c in comps], list(kept), soft_counts)
        weights, means, variances, nk = _m_step(points, resp)

        alive = weights >= COLLAPSE_WEIGHT
        if not alive.all() and alive.any():
            for i in np.flatnonzero(~alive):
                logger.warning("em_fit: component %d (image %s) collapsed, removing",
                               kept[i], comps[i].image_id)
            weights = weights[alive] / weights[alive].sum()
            means, variances, nk = means[alive], variances[alive], nk[alive]
            kept = [k for k, a in zip(kept, alive) if a]
            comps = [c for c, a in zip(comps, alive) if a]

        for i, c in enumerate(comps):
            c.weight, c.mean, c.var = float(weights[i]), means[i], variances[i]
        soft_counts = nk

        resp, ll = responsibilities(points, comps)
        if ll < trace[-1] - 1e-9:
            comps, kept, soft_counts = snapshot
            break
        converged = abs(ll - trace[-1]) <= tol * (abs(trace[-1]) + 1e-12)
        trace.append(ll)
        if converged:
            break

    return EmFit(comps, trace, kept, np.asarray(soft_counts, dtype=np.float64), points.shape[0])


def em_fit_image(fm: np.ndarray, components: list[GaussianComponent],
                 max_iter: int = 20, tol: float = 1e-4,
                 max_points: int = MAX_FIT_POINTS, seed: int = 0) -> EmFit:
    """EM over one image's pixels, subsampled to at most max_points."""
    points = np.asarray(fm, dtype=np.float64).reshape(-1, fm.shape[-1])
    n = points.shape[0]
    if n > max_points:
        idx = np.random.default_rng(seed).choice(n, size=max_points, replace=False)
        points = points[np.sort(idx)]
    return em_fit(points, components, max_iter=max_iter, tol=tol)


def _partition_stats(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = points.mean(axis=0)
    var = np.maximum(points.var(axis=0), VAR_FLOOR)
    return mean, var


def init_per_image(fm: np.ndarray, prediction: np.ndarray,
                   image_id: str = "") -> tuple[GaussianComponent | None, GaussianComponent]:
    """Seed per-image Gaussians from the thresholded model prediction.

    Pixels with prediction >= 0.5 form the crack partition. The crack
    component is omitted when its partition holds fewer than 32 pixels; the
    background component always exists (falling back to global statistics if
    its own partition is that small).
    """
    if fm.shape[:2] != prediction.shape:
        raise ValueError(f"feature map {fm.shape[:2]} and prediction {prediction.shape} disagree")
    flat = np.asarray(fm, dtype=np.float64).reshape(-1, fm.shape[-1])
    is_crack = np.asarray(prediction).ravel() >= 0.5
    n = flat.shape[0]
    n_crack = int(is_crack.sum())

    crack = None
    if n_crack >= MIN_PARTITION:
        mean, var = _partition_stats(flat[is_crack])
        crack = GaussianComponent(mean, var, n_crack / n, image_id)

    n_bg = n - n_crack
    bg_points = flat[~is_crack] if n_bg >= MIN_PARTITION else flat
    mean, var = _partition_stats(bg_points)
    background = GaussianComponent(mean, var, 1.0 - (crack.weight if crack else 0.0), image_id)
    return crack, background


def pool_mixtures(fits: list[ImageFit]) -> MoGModel:
    """Gather per-image components into the two class-level mixtures.

    Component weights are each contributing image's class pixel mass,
    normalized to sum to one within the class.
    """
    if not any(f.background is not None for f in fits):
        raise ValueError("pool_mixtures needs at least one background component")

    def gather(comps_masses: list[tuple[GaussianComponent, float]], class_id: str) -> ClassMixture:
        total = sum(m for _, m in comps_masses)
        comps = [replace(c, weight=m / total) for c, m in comps_masses] if total > 0 else []
        return ClassMixture(comps, class_id)

    crack = [(f.crack, f.crack_mass) for f in fits if f.crack is not None]
    background = [(f.background, f.background_mass) for f in fits if f.background is not None]
    return MoGModel(gather(crack, CRACK), gather(background, BACKGROUND))


def class_log_density(points: np.ndarray, mixture: ClassMixture) -> np.ndarray:
    """log p(x | class) under the pooled mixture, shape (N,)."""
    means = np.stack([c.mean for c in mixture.components])
    variances = np.stack([c.var for c in mixture.components])
    weights = np.array([c.weight for c in mixture.components])
    with np.errstate(divide="ignore"):
        return logsumexp(np.log(weights) + _log_density(points, means, variances), axis=1)


def _posterior_from_logs(log_crack: np.ndarray, log_bg: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-class softmax with equal priors; flags rows where both underflow."""
    stacked = np.stack([log_crack, log_bg], axis=-1)
    uninformative = ~np.isfinite(stacked).any(axis=-1)
    peak = np.max(np.where(np.isfinite(stacked), stacked, -np.inf), axis=-1, keepdims=True)
    e = np.exp(stacked - np.where(np.isfinite(peak), peak, 0.0))
    denom = e.sum(axis=-1, keepdims=True)
    p = e / np.where(denom > 0.0, denom, 1.0)
    p_crack = np.where(uninformative, 0.5, p[..., 0])
    p_bg = np.where(uninformative, 0.5, p[..., 1])
    return p_crack, p_bg, uninformative


def posterior(x: np.ndarray, mog: MoGModel) -> tuple[float, float]:
    """Two-class posterior for one feature vector; outputs sum to 1."""
    if not mog.crack.components or not mog.background.components:
        raise ValueError("posterior requires both class mixtures to be nonempty")
    point = np.asarray(x, dtype=np.float64)[None, :]
    lc = class_log_density(point, mog.crack)
    lb = class_log_density(point, mog.background)
    p_crack, p_bg, _ = _posterior_from_logs(lc, lb)
    return float(p_crack[0]), float(p_bg[0])


def generate_pseudo_labels(fm: np.ndarray, mog: MoGModel) -> PseudoLabels:
    """Per-pixel MAP class under the pooled posterior; ties go to background.

    An empty crack mixture yields all-background labels at confidence 1 with
    the degenerate flag set.
    """
    if fm.ndim != 3:
        raise ValueError(f"feature map must be (H, W, D), got shape {fm.shape}")
    h, w, d = fm.shape
    if mog.background.components and mog.background.components[0].mean.shape[0] != d:
        raise ValueError(f"feature dim {d} does not match model dim "
                         f"{mog.background.components[0].mean.shape[0]}")
    if not mog.crack.components:
        return PseudoLabels(np.zeros((h, w), bool), np.ones((h, w)), True)

    flat = np.asarray(fm, dtype=np.float64).reshape(-1, d)
    lc = class_log_density(flat, mog.crack)
    lb = class_log_density(flat, mog.background)
    p_crack, p_bg, _ = _posterior_from_logs(lc, lb)
    mask = (p_crack > p_bg).reshape(h, w)
    confidence = np.maximum(p_crack, p_bg).reshape(h, w)
    return PseudoLabels(mask, confidence, False)


def fit_dataset(feature_maps: list[np.ndarray], predictions: list[np.ndarray],
                image_ids: list[str], max_iter: int = 20, tol: float = 1e-4,
                max_points: int = MAX_FIT_POINTS, seed: int = 0) -> tuple[MoGModel, list[ImageFit]]:
    """Per-image init + EM for every image, then pool into class mixtures."""
    fits = []
    for i, (fm, pred, image_id) in enumerate(zip(feature_maps, predictions, image_ids)):
        crack, background = init_per_image(fm, pred, image_id)
        comps = [background] + ([crack] if crack is not None else [])
        labels = [BACKGROUND] + ([CRACK] if crack is not None else [])
        fit_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        result = em_fit_image(fm, comps, max_iter=max_iter, tol=tol,
                              max_points=max_points, seed=fit_seed)
        scale = fm.shape[0] * fm.shape[1] / result.n_points
        by_class = {labels[k]: (comp, float(count) * scale)
                    for comp, k, count in zip(result.components, result.kept, result.soft_counts)}
        if BACKGROUND not in by_class:
            continue  # background collapsed; image contributes nothing
        bg_comp, bg_mass = by_class[BACKGROUND]
        crack_comp, crack_mass = by_class.get(CRACK, (None, 0.0))
        fits.append(ImageFit(image_id, bg_comp, crack_comp, bg_mass, crack_mass))
    return pool_mixtures(fits), fits


def save_mog(path, mog: MoGModel) -> None:
    """One JSON record per component: class, image_id, weight, mean[], var[]."""
    with open(path, "w") as fh:
        for mixture in (mog.crack, mog.background):
            for c in mixture.components:
                fh.write(json.dumps({
                    "class": mixture.class_id, "image_id": c.image_id,
                    "weight": c.weight, "mean": c.mean.tolist(), "var": c.var.tolist(),
                }) + "\n")


def load_mog(path) -> MoGModel:
    by_class: dict[str, list[GaussianComponent]] = {CRACK: [], BACKGROUND: []}
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        rec = json.loads(line)
        by_class[rec["class"]].append(GaussianComponent(
            np.array(rec["mean"]), np.array(rec["var"]), rec["weight"], rec["image_id"]))
    return MoGModel(ClassMixture(by_class[CRACK], CRACK),
                    ClassMixture(by_class[BACKGROUND], BACKGROUND))
