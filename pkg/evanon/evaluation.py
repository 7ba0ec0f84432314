"""
Event Anonymization - Evaluation Protocols

This module measures what the anonymizer hides and what it keeps:

- image quality of an attacker's reconstructions (mean SSIM / PSNR)
- cross-camera person ReId ranking (CMC rank-k, mAP)
- the retrieval attack: an image-domain embedder asked to find people in
  galleries of reconstructions, under three query/gallery pairings
- the inversion attack and the encryption baselines on top of those
- the loss-weight ablation grid

Classes:
- EvalReport - Metrics of one protocol, flattened for reports
- RetrievalResult - Retrieval reports plus the trained image embedder
- InversionResult - Inverter, its training log and retrieval reports
- AblationRow - Metrics of one (alpha, beta, gamma) weighting

Functions:
- rank_metrics() - CMC curve and mAP with same-camera same-sequence exclusion
- evaluate_reid(), evaluate_image_quality(), image_quality()
- cross_camera_split()
- retrieval_attack(), inversion_attack(), evaluate_encryption_baseline()
- run_loss_ablation()
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .diffnet import OptimConfig, Tensor
from .errors import DataError
from .networks import AnonymizerNet, AttackerNet, InverterNet, ReIdNet, l2_normalize, predict
from .quality import DEFAULT_SSIM, SsimConfig, psnr_from_mse, ssim_per_sample
from .samples import CorpusWindows, WindowSet
from .training import TrainConfig, TrainingLog, train_embedder, train_inverter, train_joint

logger = logging.getLogger(__name__)

CMC_RANKS = (1, 5, 10)
ABLATION_WEIGHTS: Tuple[Tuple[float, float, float], ...] = ((0.0, 0.0, 1.0), (0.0, 1.0, 1.0), (1.0, 1.0, 1.0))

BatchFn = Callable[[Tensor], Tensor]


@dataclass
class EvalReport:
    protocol: str
    query_source: str = ""
    gallery_source: str = ""
    ssim: Optional[float] = None
    psnr: Optional[float] = None
    cmc: Dict[int, float] = field(default_factory=dict)
    mean_ap: Optional[float] = None
    chance: Optional[float] = None
    num_queries: int = 0
    num_gallery: int = 0
    curve: List[float] = field(default_factory=list)

    def rank(self, k: int) -> float:
        return self.cmc[k]

    def as_values(self) -> Dict[str, Any]:
        """Flat `<protocol>.<metric>` entries for key = value reports."""
        values: Dict[str, Any] = {}
        if self.query_source:
            values["query"] = self.query_source
        if self.gallery_source:
            values["gallery"] = self.gallery_source
        if self.ssim is not None:
            values["ssim"] = self.ssim
        if self.psnr is not None:
            values["psnr"] = self.psnr
        for k, v in sorted(self.cmc.items()):
            values[f"rank{k}"] = v
        if self.mean_ap is not None:
            values["map"] = self.mean_ap
        if self.chance is not None:
            values["chance"] = self.chance
        values["queries"] = self.num_queries
        if self.num_gallery:
            values["gallery_size"] = self.num_gallery
        return {f"{self.protocol}.{k}": v for k, v in values.items()}


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


def rank_metrics(
    query_emb: Tensor,
    query_ids: np.ndarray,
    query_cams: np.ndarray,
    gallery_emb: Tensor,
    gallery_ids: np.ndarray,
    gallery_cams: np.ndarray,
    query_seqs: Optional[np.ndarray] = None,
    gallery_seqs: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, float, int]:
    """CMC curve, mAP and number of scored queries.

    Distances are Euclidean; ties keep gallery order. Gallery entries from the
    query's own camera and sequence are excluded. Queries without any
    relevant gallery item are skipped.

    Raises:
        DataError: If no query has a relevant gallery item
    """
    q = np.atleast_2d(np.asarray(query_emb, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gallery_emb, dtype=np.float64))
    dist = np.sqrt(((q[:, None, :] - g[None, :, :]) ** 2).sum(axis=-1))
    curve = np.zeros(g.shape[0], dtype=np.float64)
    aps: List[float] = []
    for i in range(q.shape[0]):
        order = np.argsort(dist[i], kind="stable")
        if query_seqs is not None and gallery_seqs is not None:
            junk = (gallery_cams[order] == query_cams[i]) & (gallery_seqs[order] == query_seqs[i])
        else:
            junk = np.zeros(order.size, dtype=bool)
        ranked = order[~junk]
        matches = gallery_ids[ranked] == query_ids[i]
        if not matches.any():
            continue
        hits = np.flatnonzero(matches)
        curve[hits[0] :] += 1.0
        aps.append(float(np.mean(np.arange(1, hits.size + 1) / (hits + 1.0))))
    if not aps:
        raise DataError("no query has a relevant gallery item")
    return curve / len(aps), float(np.mean(aps)), len(aps)


def _cmc_at(curve: np.ndarray, k: int) -> float:
    return float(curve[min(k, curve.size) - 1])


def ranking_report(
    protocol: str,
    query_emb: Tensor,
    query: WindowSet,
    gallery_emb: Tensor,
    gallery: WindowSet,
    query_source: str = "",
    gallery_source: str = "",
) -> EvalReport:
    curve, mean_ap, valid = rank_metrics(
        query_emb,
        query.identities,
        query.cameras,
        gallery_emb,
        gallery.identities,
        gallery.cameras,
        query.sequences,
        gallery.sequences,
    )
    report = EvalReport(
        protocol,
        query_source=query_source,
        gallery_source=gallery_source,
        cmc={k: _cmc_at(curve, k) for k in CMC_RANKS},
        mean_ap=mean_ap,
        chance=1.0 / np.unique(gallery.identities).size,
        num_queries=valid,
        num_gallery=len(gallery),
        curve=curve.tolist(),
    )
    logger.info(
        f"{protocol}: rank1={report.rank(1):.3f} mAP={mean_ap:.3f} "
        f"(chance {report.chance:.3f}, {valid} queries)"
    )
    return report


def camera_masks(windows: WindowSet) -> Tuple[np.ndarray, np.ndarray]:
    """Query windows come from the first camera, the gallery from all others."""
    cameras = np.unique(windows.cameras)
    if cameras.size < 2:
        raise DataError("cross-camera evaluation needs at least two cameras")
    query = windows.cameras == cameras[0]
    return query, ~query


def cross_camera_split(windows: WindowSet) -> Tuple[WindowSet, WindowSet]:
    query, gallery = camera_masks(windows)
    return windows.subset(np.flatnonzero(query)), windows.subset(np.flatnonzero(gallery))


def embed_all(model: ReIdNet, inputs: Tensor) -> Tensor:
    return l2_normalize(predict(model.embed_batch, inputs))


def evaluate_reid(
    reid: ReIdNet,
    query: WindowSet,
    gallery: WindowSet,
    transform: Optional[BatchFn] = None,
    protocol: str = "reid",
) -> EvalReport:
    """Cross-camera ReId on voxels, optionally passed through `transform` (E_an)."""
    q_in, g_in = query.voxels, gallery.voxels
    if transform is not None:
        q_in, g_in = predict(transform, q_in), predict(transform, g_in)
    source = "anonymized" if transform is not None else "raw"
    return ranking_report(
        protocol, embed_all(reid, q_in), query, embed_all(reid, g_in), gallery, source, source
    )


# ---------------------------------------------------------------------------
# Image quality
# ---------------------------------------------------------------------------


def image_quality(
    reconstructions: Tensor, frames: Tensor, protocol: str, cfg: SsimConfig = DEFAULT_SSIM
) -> EvalReport:
    """Mean per-window SSIM and PSNR of N x 1 x H x W reconstructions."""
    rec = np.asarray(reconstructions, dtype=np.float64)
    ref = np.asarray(frames, dtype=np.float64)
    if rec.shape != ref.shape:
        raise DataError(f"reconstructions {rec.shape} do not match frames {ref.shape}")
    ssim_values = ssim_per_sample(rec, ref, cfg)
    mse = ((rec - ref) ** 2).mean(axis=(1, 2, 3))
    psnr_values = [psnr_from_mse(float(m)) for m in mse]
    report = EvalReport(
        protocol,
        ssim=float(np.mean(ssim_values)),
        psnr=float(np.mean(psnr_values)),
        num_queries=int(rec.shape[0]),
    )
    logger.info(f"{protocol}: SSIM={report.ssim:.4f} PSNR={report.psnr:.3f} dB")
    return report


def evaluate_image_quality(
    attacker: BatchFn,
    windows: WindowSet,
    anonymizer: Optional[BatchFn] = None,
    protocol: Optional[str] = None,
    cfg: SsimConfig = DEFAULT_SSIM,
) -> EvalReport:
    """Attacker reconstructions vs ground-truth frames over all windows.

    Without an anonymizer this is the raw path; with one, the attacker sees
    E_an(X).
    """
    voxels = windows.voxels
    if anonymizer is not None:
        voxels = predict(anonymizer, voxels)
    protocol = protocol or ("quality_anonymized" if anonymizer is not None else "quality_raw")
    return image_quality(predict(attacker, voxels), windows.frames, protocol, cfg)


# ---------------------------------------------------------------------------
# Retrieval and inversion attacks
# ---------------------------------------------------------------------------


@dataclass
class RetrievalResult:
    reports: Dict[str, EvalReport]
    embedder: ReIdNet
    log: TrainingLog


RETRIEVAL_PAIRINGS: Dict[str, Tuple[str, str]] = {
    "retrieval_rgb_event": ("rgb", "event"),
    "retrieval_event_anon": ("event", "anonymized"),
    "retrieval_rgb_anon": ("rgb", "anonymized"),
}


def train_retrieval_embedder(
    windows: CorpusWindows, attacker: BatchFn, config: TrainConfig
) -> Tuple[ReIdNet, TrainingLog]:
    """Image-domain embedder fit on train frames plus raw reconstructions."""
    train = windows.train
    images = np.concatenate([train.frames, predict(attacker, train.voxels)])
    identities = np.concatenate([train.identities, train.identities])
    return train_embedder(
        images,
        identities,
        windows.train_ids,
        config,
        config.retrieval_epochs,
        OptimConfig(config.retrieval_lr, config.momentum, config.weight_decay),
        seed=config.seed + 3,
        name="retrieval",
    )


def retrieval_reports(
    embedder: ReIdNet,
    test: WindowSet,
    sources: Dict[str, Tensor],
    pairings: Dict[str, Tuple[str, str]],
) -> Dict[str, EvalReport]:
    """Rank gallery images of one source against query images of another."""
    q_mask, g_mask = camera_masks(test)
    q_idx, g_idx = np.flatnonzero(q_mask), np.flatnonzero(g_mask)
    query, gallery = test.subset(q_idx), test.subset(g_idx)
    embedded = {name: embed_all(embedder, images) for name, images in sources.items()}
    return {
        protocol: ranking_report(
            protocol, embedded[q_src][q_idx], query, embedded[g_src][g_idx], gallery, q_src, g_src
        )
        for protocol, (q_src, g_src) in pairings.items()
    }


def retrieval_attack(
    windows: CorpusWindows,
    attacker: BatchFn,
    anonymizer: BatchFn,
    config: TrainConfig,
    inverter: Optional[BatchFn] = None,
) -> RetrievalResult:
    """Train the image embedder, then score Q_RGB/G_event, Q_event/G_an, Q_RGB/G_an.

    With an inverter, Q_RGB against reconstructions of E_inv(E_an(X)) is added.
    """
    embedder, log = train_retrieval_embedder(windows, attacker, config)
    test = windows.test
    anonymized = predict(anonymizer, test.voxels)
    sources = {
        "rgb": test.frames,
        "event": predict(attacker, test.voxels),
        "anonymized": predict(attacker, anonymized),
    }
    pairings = dict(RETRIEVAL_PAIRINGS)
    if inverter is not None:
        sources["inverted"] = predict(attacker, predict(inverter, anonymized))
        pairings["retrieval_rgb_inverted"] = ("rgb", "inverted")
    return RetrievalResult(retrieval_reports(embedder, test, sources, pairings), embedder, log)


@dataclass
class InversionResult:
    inverter: InverterNet
    log: TrainingLog
    reports: Dict[str, EvalReport]


def inversion_attack(
    anonymizer: AnonymizerNet,
    attacker: AttackerNet,
    windows: CorpusWindows,
    config: TrainConfig,
    ssim_config: SsimConfig = DEFAULT_SSIM,
) -> InversionResult:
    """Train E_inv against the frozen anonymizer and rerun the retrieval attack."""
    inverter, log = train_inverter(anonymizer, attacker, windows.train, config, ssim_config)
    retrieval = retrieval_attack(windows, attacker, anonymizer, config, inverter=inverter)
    reports = dict(retrieval.reports)
    reports["quality_inverted"] = evaluate_image_quality(
        attacker,
        windows.test,
        anonymizer=lambda x: inverter.forward(anonymizer.forward(x)),
        protocol="quality_inverted",
        cfg=ssim_config,
    )
    return InversionResult(inverter, log, reports)


# ---------------------------------------------------------------------------
# Encryption baselines
# ---------------------------------------------------------------------------


def evaluate_encryption_baseline(
    encrypted: Dict[str, WindowSet],
    attacker: BatchFn,
    reid_raw: ReIdNet,
    embedder: ReIdNet,
    cfg: SsimConfig = DEFAULT_SSIM,
) -> Dict[str, EvalReport]:
    """Attack quality, ReId and retrieval on test windows built from encrypted streams.

    ReId uses the embedder trained on raw voxels; retrieval queries clear
    frames against reconstructions of the encrypted windows.
    """
    reports: Dict[str, EvalReport] = {}
    for method in sorted(encrypted):
        windows = encrypted[method]
        prefix = f"encrypt_{method}"
        reconstructions = predict(attacker, windows.voxels)
        reports[f"{prefix}_quality"] = image_quality(reconstructions, windows.frames, f"{prefix}_quality", cfg)
        query, gallery = cross_camera_split(windows)
        reports[f"{prefix}_reid"] = ranking_report(
            f"{prefix}_reid",
            embed_all(reid_raw, query.voxels),
            query,
            embed_all(reid_raw, gallery.voxels),
            gallery,
            "encrypted",
            "encrypted",
        )
        reports.update(
            retrieval_reports(
                embedder,
                windows,
                {"rgb": windows.frames, "encrypted": reconstructions},
                {f"{prefix}_retrieval": ("rgb", "encrypted")},
            )
        )
    return reports


# ---------------------------------------------------------------------------
# Loss ablation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    alpha: float
    beta: float
    gamma: float
    rank1: float
    mean_ap: float
    ssim: float
    psnr: float
    final_total: float

    def as_row(self) -> List[float]:
        return [self.alpha, self.beta, self.gamma, self.rank1, self.mean_ap, self.ssim, self.psnr, self.final_total]


ABLATION_HEADER = ["alpha", "beta", "gamma", "rank1", "map", "ssim", "psnr", "final_total"]


def run_loss_ablation(
    windows: CorpusWindows,
    attacker: AttackerNet,
    config: TrainConfig,
    weightings: Sequence[Tuple[float, float, float]] = ABLATION_WEIGHTS,
    ssim_config: SsimConfig = DEFAULT_SSIM,
) -> List[AblationRow]:
    """Joint training + evaluation for each (alpha, beta, gamma) weighting."""
    query, gallery = cross_camera_split(windows.test)
    rows: List[AblationRow] = []
    for alpha, beta, gamma in weightings:
        logger.info(f"Ablation run alpha={alpha} beta={beta} gamma={gamma}")
        result = train_joint(
            windows.train, windows.train_ids, attacker, config.with_weights(alpha, beta, gamma), ssim_config
        )
        reid = evaluate_reid(result.reid, query, gallery, transform=result.anonymizer.forward)
        quality = evaluate_image_quality(attacker, windows.test, anonymizer=result.anonymizer.forward, cfg=ssim_config)
        rows.append(
            AblationRow(
                alpha,
                beta,
                gamma,
                reid.rank(1),
                float(reid.mean_ap),
                float(quality.ssim),
                float(quality.psnr),
                result.log.final["total"],
            )
        )
    return rows
