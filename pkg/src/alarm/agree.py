"""Agreement statistics between two raters (automatic vs. manual attenuation).

Positive means steatotic (HU strictly below the cutoff); the second series
is treated as the reference.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from alarm.errors import DegenerateSeries, EmptySeries, UndefinedKappa

Z95 = 1.96

# inclusive upper bounds, Landis & Koch (1977); negative kappa is "poor"
LANDIS_KOCH = (
    (0.20, "slight"),
    (0.40, "fair"),
    (0.60, "moderate"),
    (0.80, "substantial"),
    (math.inf, "almost_perfect"),
)


def classify(hu: float, cutoff: float = 40.0) -> bool:
    """True when ``hu`` is strictly below ``cutoff``; exactly 40 HU is negative."""
    if not math.isfinite(hu):
        raise ValueError(f"non-finite attenuation {hu}")
    return hu < cutoff


def _paired(a: Sequence[float], b: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired series must be 1-D and equal length, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ValueError("paired series need at least two observations")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("paired series contain non-finite values")
    return a, b


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = _paired(a, b)
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(da @ da))
    sb = math.sqrt(float(db @ db))
    if sa == 0 or sb == 0:
        raise DegenerateSeries("Pearson correlation undefined for a constant series")
    r = float(da @ db) / (sa * sb)
    return max(-1.0, min(1.0, r))


@dataclass
class BlandAltman:
    bias: float
    sd: float
    loa_low: float
    loa_high: float
    means: list[float]
    diffs: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def bland_altman(a: Sequence[float], b: Sequence[float]) -> BlandAltman:
    """Bias and 95% limits of agreement of ``a - b`` (sample SD, 1.96 multiplier)."""
    a, b = _paired(a, b)
    diff = a - b
    bias = float(diff.mean())
    sd = float(diff.std(ddof=1))
    return BlandAltman(
        bias=bias,
        sd=sd,
        loa_low=bias - Z95 * sd,
        loa_high=bias + Z95 * sd,
        means=((a + b) / 2).tolist(),
        diffs=diff.tolist(),
    )


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.n < 1:
            raise ValueError("confusion matrix is empty")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_labels(cls, test: Sequence[bool], reference: Sequence[bool]) -> "ConfusionMatrix":
        t = np.asarray(test, dtype=bool)
        r = np.asarray(reference, dtype=bool)
        return cls(
            tp=int(np.sum(t & r)),
            fp=int(np.sum(t & ~r)),
            fn=int(np.sum(~t & r)),
            tn=int(np.sum(~t & ~r)),
        )


@dataclass
class AgreementStats:
    kappa: float
    ci95: tuple[float, float]
    se: float
    p_value: float
    agreement_pct: float
    sensitivity: float | None
    specificity: float | None
    band: str
    counts: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "ci95": list(self.ci95),
            "se": self.se,
            "p_value": self.p_value,
            "agreement_pct": self.agreement_pct,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "band": self.band,
            "counts": asdict(self.counts),
        }


def landis_koch(k: float) -> str:
    if k < 0:
        return "poor"
    for upper, name in LANDIS_KOCH:
        if k <= upper:
            return name
    return LANDIS_KOCH[-1][1]


def kappa(cm: ConfusionMatrix) -> AgreementStats:
    """Cohen's kappa with the large-sample 95% CI and a two-sided z test against zero."""
    n = cm.n
    po = (cm.tp + cm.tn) / n
    pe = ((cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)) / (n * n)
    if pe >= 1.0:
        raise UndefinedKappa("chance agreement is 1 (both raters use a single class)")
    k = (po - pe) / (1.0 - pe)
    se = math.sqrt(po * (1.0 - po) / (n * (1.0 - pe) ** 2))
    lo = max(-1.0, k - Z95 * se)
    hi = min(1.0, k + Z95 * se)
    se0 = math.sqrt(pe / (n * (1.0 - pe)))
    p = math.erfc(abs(k / se0) / math.sqrt(2.0)) if se0 > 0 else 0.0
    pos, neg = cm.tp + cm.fn, cm.tn + cm.fp
    return AgreementStats(
        kappa=k,
        ci95=(lo, hi),
        se=se,
        p_value=p,
        agreement_pct=100.0 * po,
        sensitivity=100.0 * cm.tp / pos if pos else None,
        specificity=100.0 * cm.tn / neg if neg else None,
        band=landis_koch(k),
        counts=cm,
    )


def summarize(series: Sequence[float], cutoff: float = 40.0) -> dict:
    """Cohort summary: mean, SD, median, range, quartiles, and count below ``cutoff``."""
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise EmptySeries("cannot summarise an empty series")
    q25, med, q75 = np.percentile(x, [25, 50, 75], method="linear")
    below = int(np.sum(x < cutoff))
    return {
        "n": int(x.size),
        "mean": float(x.mean()),
        "sd": float(x.std(ddof=1)) if x.size > 1 else None,
        "median": float(med),
        "min": float(x.min()),
        "max": float(x.max()),
        "q25": float(q25),
        "q75": float(q75),
        "count_below_cutoff": below,
        "pct_below_cutoff": 100.0 * below / x.size,
    }
