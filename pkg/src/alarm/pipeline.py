"""Configuration and per-scan orchestration shared by the CLI verbs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError

from alarm import roi, segment
from alarm.errors import AlarmError, InvalidConfig, PipelineError
from alarm.report import dumps, round_sig
from alarm.volgrid import flip_axes, read_image


class SegmenterSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    source: Literal["mask_file", "threshold", "external"] = "threshold"
    hu_window: tuple[float, float] = (0.0, 100.0)
    closing_radius_mm: float = 2.0
    command_template: str = ""
    timeout_s: Optional[float] = None


class PipelineConfig(BaseModel):
    """Everything a run needs besides its input paths; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    alpha: float = 1.0 / 3.0
    circle_radius_mm: float = 7.0
    volume_threshold_mm3: float = 1000.0
    hu_cutoff: float = 40.0
    segmenter: SegmenterSettings = SegmenterSettings()
    flip_x: bool = False
    flip_y: bool = False
    flip_z: bool = False
    out_dir: Optional[str] = None
    overlay_window: tuple[float, float] = (-100.0, 200.0)
    workers: int = 1

    def roi_config(self) -> roi.RoiConfig:
        return roi.RoiConfig(
            alpha=self.alpha,
            circle_radius_mm=self.circle_radius_mm,
            volume_threshold_mm3=self.volume_threshold_mm3,
            hu_cutoff=self.hu_cutoff,
        )

    def segmenter_config(self, mask_path: str | None) -> segment.SegmenterConfig:
        s = self.segmenter
        return segment.SegmenterConfig(
            source="mask_file" if mask_path else s.source,
            hu_window=s.hu_window,
            closing_radius_mm=s.closing_radius_mm,
            command_template=s.command_template,
            mask_path=mask_path,
            timeout_s=s.timeout_s,
        )

    @property
    def flips(self) -> tuple[bool, bool, bool]:
        return (self.flip_x, self.flip_y, self.flip_z)

    def check(self) -> None:
        """Raise InvalidConfig for values the schema alone cannot catch."""
        self.roi_config()
        lo, hi = self.overlay_window
        if not lo < hi:
            raise InvalidConfig("overlay_window low must be below high")
        if self.workers < 1:
            raise InvalidConfig("workers must be at least 1")
        segment.SegmenterConfig(
            source=self.segmenter.source if self.segmenter.source != "mask_file" else "threshold",
            hu_window=self.segmenter.hu_window,
            closing_radius_mm=self.segmenter.closing_radius_mm,
            command_template=self.segmenter.command_template,
        )


def load_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidConfig("config must be a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidConfig(str(exc)) from exc
    cfg.check()
    return cfg


def run_measure(volume_path: str, mask_path: str | None, cfg: PipelineConfig) -> roi.MeasurementReport:
    """Load, segment and measure one scan; errors come back tagged with their stage."""
    try:
        v = read_image(volume_path, kind="volume")
        v = flip_axes(v, cfg.flips)
    except AlarmError as exc:
        raise PipelineError("load", exc) from exc
    scfg = cfg.segmenter_config(mask_path)
    try:
        m = segment.segment(v, scfg)
        if scfg.source == "mask_file":
            m = flip_axes(m, cfg.flips)
    except AlarmError as exc:
        raise PipelineError("segment", exc) from exc
    provenance = {
        "volume": str(volume_path),
        "mask": str(mask_path) if mask_path else None,
        "segmenter_source": scfg.source,
        "flips": list(cfg.flips),
    }
    return roi.measure(v, m, cfg.roi_config(), provenance=provenance)


ROW_FIELDS = (
    "id",
    "volume",
    "mask",
    "center_roi_hu",
    "periphery_hu",
    "p1_hu",
    "p2_hu",
    "p3_hu",
    "whole_liver_hu",
    "center_volume_mm3",
    "erosion_iterations",
    "z_c",
    "nafld_center",
    "nafld_periphery",
    "error",
)
NUMERIC_SUMMARY_FIELDS = ("center_roi_hu", "periphery_hu", "whole_liver_hu")


def _fmt(x: float) -> str:
    return repr(round_sig(x))


def report_row(item_id: str, volume: str, mask: str | None, rep: roi.MeasurementReport) -> dict:
    c = rep.circles
    return {
        "id": item_id,
        "volume": volume,
        "mask": mask or "",
        "center_roi_hu": _fmt(rep.center_roi.mean_hu),
        "periphery_hu": _fmt(rep.mean_of_three_hu),
        "p1_hu": _fmt(c[0].mean_hu),
        "p2_hu": _fmt(c[1].mean_hu),
        "p3_hu": _fmt(c[2].mean_hu),
        "whole_liver_hu": _fmt(rep.whole_liver_mean_hu),
        "center_volume_mm3": _fmt(rep.center_roi.volume_mm3),
        "erosion_iterations": str(rep.center_roi.erosion_iterations),
        "z_c": str(rep.geometry.z_c),
        "nafld_center": str(rep.nafld_center).lower(),
        "nafld_periphery": str(rep.nafld_periphery).lower(),
        "error": "",
    }


def error_row(item_id: str, volume: str, mask: str | None, err: Exception) -> dict:
    row = {k: "" for k in ROW_FIELDS}
    row.update(id=item_id, volume=volume, mask=mask or "", error=str(err))
    return row


def run_item(item: tuple[str, str, str | None], cfg: PipelineConfig) -> tuple[dict, str | None]:
    """Batch worker: returns (csv row, report JSON text or None on failure)."""
    item_id, volume, mask = item
    try:
        rep = run_measure(volume, mask, cfg)
    except (AlarmError, ValueError) as exc:
        return error_row(item_id, volume, mask, exc), None
    return report_row(item_id, volume, mask, rep), dumps(rep.to_dict())
