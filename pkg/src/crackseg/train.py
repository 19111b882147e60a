"""Training loop: supervised warmup, then mixture-guided epochs.

After warmup the loop refits the class mixtures on the current predictions
every `refresh_every` epochs and adds a lambda-weighted Dice term against the
resulting pseudo-labels. With lambda = 0 the guidance machinery is skipped
entirely, so a guided-config run and a plain supervised run share a
bit-identical parameter trajectory.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mog
from .features import image_features
from .losses import total_loss
from .metrics import compute_metrics, precision_recall, tolerant_counts
from .model import AdamW, ModelParams, TrainConfig, backward, cosine_lr, forward, init_params
from .synthdata import Sample

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
LOG_COLUMNS = ("epoch", "lr", "l_bce", "l_dice", "l_dg", "f1", "iou", "dice")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    l_bce: float
    l_dice: float
    l_dg: float | None   # None while guidance is inactive
    f1: float
    iou: float
    dice: float
    precision: float
    recall: float
    note: str = ""


def _batch_seed(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 2, epoch]))


def _mog_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, 3, epoch]).generate_state(1)[0])


def _refresh_pseudo_labels(feats, params, image_ids, cfg: TrainConfig,
                           epoch: int, soft: bool):
    """Refit the class mixtures on current predictions; None when degenerate."""
    preds = [forward(f, params) for f in feats]
    try:
        model, _ = mog.fit_dataset(feats, preds, image_ids, seed=_mog_seed(cfg.seed, epoch))
    except ValueError as exc:
        logger.warning("epoch %d: mixture fit failed (%s), supervised fallback", epoch, exc)
        return None
    if not model.crack.components:
        logger.warning("epoch %d: crack mixture degenerate, supervised fallback", epoch)
        return None
    targets = []
    for f in feats:
        pl = mog.generate_pseudo_labels(f, model)
        if soft:
            # reconstruct the crack posterior from the MAP side of the tie
            targets.append(np.where(pl.mask, pl.confidence, 1.0 - pl.confidence))
        else:
            targets.append(pl.mask.astype(np.float64))
    return targets


def _evaluate(feats, masks, params, radius: int):
    counts = []
    for f, m in zip(feats, masks):
        prob = forward(f, params)
        pred = prob >= THRESHOLD
        counts.append(tolerant_counts(pred, m, radius))
    report = compute_metrics(counts)
    prec, rec = precision_recall(counts)
    return report.f1, report.iou, report.dice, prec, rec


def train(samples: list[Sample], cfg: TrainConfig,
          eval_samples: list[Sample] | None = None, radius: int = 3,
          soft_guidance: bool = False) -> tuple[ModelParams, list[EpochRecord]]:
    """Optimize the classifier on noisy masks; evaluate against clean truth.

    Guidance activates after `cfg.warmup_epochs` whenever cfg.lam > 0. When a
    refresh yields no usable crack mixture the epoch falls back to the
    supervised loss and the record carries a note.
    """
    cfg.validate()
    if not samples:
        raise ValueError("train needs at least one sample")

    feats = [image_features(s.image) for s in samples]
    targets = [s.noisy_mask.astype(np.float64) for s in samples]
    image_ids = [s.id or f"{i:04d}" for i, s in enumerate(samples)]
    eval_feats = [image_features(s.image) for s in eval_samples] if eval_samples else []
    eval_masks = [s.clean_mask for s in eval_samples] if eval_samples else []

    params = init_params(cfg.seed)
    opt = AdamW(params)
    guided = cfg.lam != 0.0
    pseudo: list[np.ndarray] | None = None
    records: list[EpochRecord] = []

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        active = guided and epoch >= cfg.warmup_epochs
        note = ""
        if active and (epoch - cfg.warmup_epochs) % cfg.refresh_every == 0:
            pseudo = _refresh_pseudo_labels(feats, params, image_ids, cfg, epoch, soft_guidance)
            if pseudo is None:
                note = "guidance_degenerate"
        use_pseudo = active and pseudo is not None

        perm = _batch_seed(cfg.seed, epoch).permutation(len(samples))
        sum_bce = sum_dice = sum_dg = 0.0
        for start in range(0, len(perm), cfg.batch):
            batch = perm[start:start + cfg.batch]
            params.zero_grads()
            for idx in batch:
                guide = pseudo[idx] if use_pseudo else None
                breakdown, gprob = total_loss(forward(feats[idx], params), targets[idx],
                                              guide, cfg.beta, cfg.lam)
                g = backward(feats[idx], params, gprob / len(batch))
                for name, buf in params.grads.items():
                    buf += g[name]
                sum_bce += breakdown.l_bce
                sum_dice += breakdown.l_dice
                sum_dg += breakdown.l_dg
            opt.step(params, params.grads, lr)

        n = len(samples)
        if eval_feats:
            f1, iou, dice, prec, rec = _evaluate(eval_feats, eval_masks, params, radius)
        else:
            f1 = iou = dice = prec = rec = float("nan")
        records.append(EpochRecord(
            epoch=epoch, lr=float(lr),
            l_bce=float(sum_bce / n), l_dice=float(sum_dice / n),
            l_dg=float(sum_dg / n) if use_pseudo else None,
            f1=float(f1), iou=float(iou), dice=float(dice),
            precision=float(prec), recall=float(rec), note=note))
    return params, records


def write_log(path, records: list[EpochRecord]) -> None:
    """Fixed-column CSV; floats as shortest round-trip decimals."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for r in records:
            writer.writerow([
                r.epoch, repr(r.lr), repr(r.l_bce), repr(r.l_dice),
                "" if r.l_dg is None else repr(r.l_dg),
                repr(r.f1), repr(r.iou), repr(r.dice)])


def read_log(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected log columns {header}")
        out = []
        for row in reader:
            out.append(EpochRecord(
                epoch=int(row[0]), lr=float(row[1]), l_bce=float(row[2]),
                l_dice=float(row[3]), l_dg=None if row[4] == "" else float(row[4]),
                f1=float(row[5]), iou=float(row[6]), dice=float(row[7]),
                precision=float("nan"), recall=float("nan")))
        return out
