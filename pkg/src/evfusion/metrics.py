"""Reconstruction quality metrics and the CSV report format."""

from __future__ import annotations

import numpy as np

from .core import IntensityFrame

PSNR_CAP_DB = 99.0


def _pixels(f) -> np.ndarray:
    return f.pixels if isinstance(f, IntensityFrame) else np.asarray(f, dtype=np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 99 dB."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError("psnr requires matching shapes")
    mse = float(np.mean((pa - pb) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def ssim(a, b, window: int = 8, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity over all fully supported windows."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError("ssim requires matching shapes")
    h, w = pa.shape
    if h < window or w < window:
        raise ValueError(f"images must be at least {window}x{window}")

    def window_mean(x):
        c = np.cumsum(np.cumsum(np.pad(x, ((1, 0), (1, 0))), axis=0), axis=1)
        s = (
            c[window:, window:]
            - c[:-window, window:]
            - c[window:, :-window]
            + c[:-window, :-window]
        )
        return s / (window * window)

    mu_a = window_mean(pa)
    mu_b = window_mean(pb)
    var_a = window_mean(pa * pa) - mu_a * mu_a
    var_b = window_mean(pb * pb) - mu_b * mu_b
    cov = window_mean(pa * pb) - mu_a * mu_b
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# CSV report: frame_index,timestamp,method,psnr,ssim
# ---------------------------------------------------------------------------

CSV_HEADER = "frame_index,timestamp,method,psnr,ssim"


def write_metrics_csv(path, rows) -> None:
    """rows: iterable of (frame_index, timestamp, method, psnr, ssim)."""
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for idx, ts, method, p, s in rows:
            f.write(f"{idx},{float(ts)!r},{method},{p:.6f},{s:.6f}\n")


def read_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            idx, ts, method, p, s = line.split(",")
            rows.append(
                {
                    "frame_index": int(idx),
                    "timestamp": float(ts),
                    "method": method,
                    "psnr": float(p),
                    "ssim": float(s),
                }
            )
    return rows
