"""Fusion quality metrics: EN, SD, SF, VIF, Q^{AB/F}, MI.

All metrics take single-channel images in [0, 1] (callers denormalize the
(-1, 1) network output first). EN and MI quantize to 256 intensity levels;
SD and SF work directly on the unit-range floats, which matches the scale of
values commonly reported for these indicators. VIF internally rescales to the
0-255 convention its reference constants assume.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .errors import InsufficientPairs, ShapeError

# Strength/orientation sigmoid constants of the Xydeas-Petrovic index.
_QABF_TG, _QABF_KG, _QABF_DG = 0.9994, -15.0, 0.5
_QABF_TA, _QABF_KA, _QABF_DA = 0.9879, -22.0, 0.8

_VIF_SIGMA_NSQ = 2.0
_VIF_EPS = 1e-10


@dataclass
class MetricReport:
    """Scores for one fused image, or averages over several."""

    en: float
    sd: float
    sf: float
    vif: float
    qabf: float
    mi: float
    n_pairs: int = 1

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "n_pairs"}


def _as_unit(img) -> np.ndarray:
    arr = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected 2-D image, got shape {arr.shape}")
    return arr


def quantize_to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def entropy(img) -> float:
    """Shannon entropy (bits) of the 256-bin histogram of the quantized image."""
    q = quantize_to_uint8(_as_unit(img))
    hist = np.bincount(q.ravel(), minlength=256).astype(np.float64)
    p = hist / q.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def std_dev(img) -> float:
    """Population standard deviation of the unit-range pixel values."""
    return float(np.std(_as_unit(img)))


def spatial_frequency(img) -> float:
    """sqrt(RF^2 + CF^2) from first differences, normalized by the pixel count."""
    arr = _as_unit(img)
    rf2 = np.sum((arr[:, 1:] - arr[:, :-1]) ** 2) / arr.size
    cf2 = np.sum((arr[1:, :] - arr[:-1, :]) ** 2) / arr.size
    return float(math.sqrt(rf2 + cf2))


def _mi_pair(a: np.ndarray, b: np.ndarray) -> float:
    joint, _, _ = np.histogram2d(
        a.ravel(), b.ravel(), bins=256, range=[[0, 256], [0, 256]]
    )
    pxy = joint / joint.sum()
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    nz = pxy > 0
    outer = px[:, None] * py[None, :]
    return float(np.sum(pxy[nz] * np.log2(pxy[nz] / outer[nz])))


def mutual_information(fused, ir, vis) -> float:
    """MI(fused, ir) + MI(fused, vis) from 256x256 joint histograms, base 2."""
    f, a, b = _as_unit(fused), _as_unit(ir), _as_unit(vis)
    if f.shape != a.shape or f.shape != b.shape:
        raise ShapeError("mutual_information inputs must share one shape")
    fq, aq, bq = quantize_to_uint8(f), quantize_to_uint8(a), quantize_to_uint8(b)
    return _mi_pair(fq, aq) + _mi_pair(fq, bq)


def _edge_strength_orientation(img: np.ndarray):
    # symmetric borders: constant images have zero edge strength everywhere
    hx = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    hy = np.array([[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]])
    sx = convolve2d(img, hx, mode="same", boundary="symm")
    sy = convolve2d(img, hy, mode="same", boundary="symm")
    strength = np.sqrt(sx * sx + sy * sy)
    orientation = np.where(sx == 0, math.pi / 2, np.arctan(sy / np.where(sx == 0, 1, sx)))
    return strength, orientation


def _edge_preservation(g_src, a_src, g_f, a_f):
    gmax = np.maximum(g_src, g_f)
    gmin = np.minimum(g_src, g_f)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(gmax > 0, gmin / np.where(gmax == 0, 1, gmax), 0.0)
    angle = 1.0 - np.abs(a_src - a_f) / (math.pi / 2)
    qg = _QABF_TG / (1.0 + np.exp(_QABF_KG * (ratio - _QABF_DG)))
    qa = _QABF_TA / (1.0 + np.exp(_QABF_KA * (angle - _QABF_DA)))
    return qg * qa


def qabf(fused, ir, vis) -> float:
    """Edge-preservation index: per-pixel strength/orientation transfer from
    each source to the fused image, weighted by source edge strength."""
    f, a, b = _as_unit(fused), _as_unit(ir), _as_unit(vis)
    if f.shape != a.shape or f.shape != b.shape:
        raise ShapeError("qabf inputs must share one shape")
    g_a, o_a = _edge_strength_orientation(a)
    g_b, o_b = _edge_strength_orientation(b)
    g_f, o_f = _edge_strength_orientation(f)
    q_af = _edge_preservation(g_a, o_a, g_f, o_f)
    q_bf = _edge_preservation(g_b, o_b, g_f, o_f)
    weight_sum = np.sum(g_a + g_b)
    if weight_sum == 0:
        return 0.0
    return float(np.sum(q_af * g_a + q_bf * g_b) / weight_sum)


def _gaussian_kernel(n: int, sd: float) -> np.ndarray:
    half = (n - 1) / 2.0
    y, x = np.ogrid[-half : half + 1, -half : half + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * sd * sd))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    return h / h.sum()


def _vif_single(ref: np.ndarray, dist: np.ndarray) -> float:
    """Pixel-domain visual information fidelity of ``dist`` against ``ref``
    over 4 dyadic scales under a Gaussian scale-mixture scene model."""
    num = 0.0
    den = 0.0
    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        win = _gaussian_kernel(n, n / 5.0)
        if scale > 1:
            if min(ref.shape) < n:
                break
            ref = convolve2d(ref, np.rot90(win, 2), mode="valid")[::2, ::2]
            dist = convolve2d(dist, np.rot90(win, 2), mode="valid")[::2, ::2]
        if min(ref.shape) < n:
            break
        mu1 = convolve2d(ref, np.rot90(win, 2), mode="valid")
        mu2 = convolve2d(dist, np.rot90(win, 2), mode="valid")
        sigma1_sq = convolve2d(ref * ref, np.rot90(win, 2), mode="valid") - mu1 * mu1
        sigma2_sq = convolve2d(dist * dist, np.rot90(win, 2), mode="valid") - mu2 * mu2
        sigma12 = convolve2d(ref * dist, np.rot90(win, 2), mode="valid") - mu1 * mu2
        sigma1_sq[sigma1_sq < 0] = 0
        sigma2_sq[sigma2_sq < 0] = 0

        g = sigma12 / (sigma1_sq + _VIF_EPS)
        sv_sq = sigma2_sq - g * sigma12

        g[sigma1_sq < _VIF_EPS] = 0
        sv_sq[sigma1_sq < _VIF_EPS] = sigma2_sq[sigma1_sq < _VIF_EPS]
        sigma1_sq[sigma1_sq < _VIF_EPS] = 0
        g[sigma2_sq < _VIF_EPS] = 0
        sv_sq[sigma2_sq < _VIF_EPS] = 0
        sv_sq[g < 0] = sigma2_sq[g < 0]
        g[g < 0] = 0
        sv_sq[sv_sq <= _VIF_EPS] = _VIF_EPS

        num += np.sum(np.log10(1.0 + g * g * sigma1_sq / (sv_sq + _VIF_SIGMA_NSQ)))
        den += np.sum(np.log10(1.0 + sigma1_sq / _VIF_SIGMA_NSQ))
    if den == 0.0 or not np.isfinite(num / den):
        return 1.0
    return float(num / den)


def vif(fused, ir, vis) -> float:
    """Equal-weight mean of the per-source fidelity scores (identity -> ~1)."""
    f, a, b = _as_unit(fused), _as_unit(ir), _as_unit(vis)
    if f.shape != a.shape or f.shape != b.shape:
        raise ShapeError("vif inputs must share one shape")
    # reference constants assume the 0-255 intensity convention
    f, a, b = f * 255.0, a * 255.0, b * 255.0
    return 0.5 * (_vif_single(a, f) + _vif_single(b, f))


def evaluate(fused, ir, vis) -> MetricReport:
    """Run all six metrics on one fused/ir/vis triple of [0, 1] images."""
    f, a, b = _as_unit(fused), _as_unit(ir), _as_unit(vis)
    if f.shape != a.shape or f.shape != b.shape:
        raise ShapeError("evaluate inputs must share one shape")
    return MetricReport(
        en=entropy(f),
        sd=std_dev(f),
        sf=spatial_frequency(f),
        vif=vif(f, a, b),
        qabf=qabf(f, a, b),
        mi=mutual_information(f, a, b),
    )


def aggregate(reports: list[MetricReport]) -> MetricReport:
    """Arithmetic mean per metric; n_pairs sums."""
    if not reports:
        raise InsufficientPairs("cannot aggregate an empty report list")
    return MetricReport(
        en=float(np.mean([r.en for r in reports])),
        sd=float(np.mean([r.sd for r in reports])),
        sf=float(np.mean([r.sf for r in reports])),
        vif=float(np.mean([r.vif for r in reports])),
        qabf=float(np.mean([r.qabf for r in reports])),
        mi=float(np.mean([r.mi for r in reports])),
        n_pairs=sum(r.n_pairs for r in reports),
    )


CSV_COLUMNS = ("id", "en", "sd", "sf", "vif", "qabf", "mi")


def write_report_csv(path: str | Path, rows: list[tuple[str, MetricReport]]) -> None:
    """One row per pair plus a final mean row; columns id,en,sd,sf,vif,qabf,mi."""
    if not rows:
        raise InsufficientPairs("no reports to write")
    mean = aggregate([r for _, r in rows])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for name, rep in rows:
            writer.writerow([name] + [f"{rep.values()[c]:.6f}" for c in CSV_COLUMNS[1:]])
        writer.writerow(["mean"] + [f"{mean.values()[c]:.6f}" for c in CSV_COLUMNS[1:]])


def read_report_csv(path: str | Path) -> list[tuple[str, MetricReport]]:
    """Read a CSV written by :func:`write_report_csv`, excluding the mean row."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            if rec["id"] == "mean":
                continue
            rows.append(
                (
                    rec["id"],
                    MetricReport(
                        en=float(rec["en"]),
                        sd=float(rec["sd"]),
                        sf=float(rec["sf"]),
                        vif=float(rec["vif"]),
                        qabf=float(rec["qabf"]),
                        mi=float(rec["mi"]),
                    ),
                )
            )
    return rows
