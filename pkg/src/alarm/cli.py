"""Command-line entry point: ``alarm {measure,batch,agree,overlay,phantom}``.

Exit codes: 0 success, 1 pipeline/data error, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

from alarm import agree, overlay, phantom, pipeline
from alarm._io import atomic_write_bytes, atomic_write_text
from alarm.errors import AlarmError, IdMismatch, InvalidConfig, InvalidSpec, PipelineError
from alarm.report import dumps, round_sig
from alarm.roi import WORKING_SPACING_MM
from alarm.volgrid import flip_axes, read_image, resample_isotropic, write_nifti

log = logging.getLogger("alarm")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _fail(stage: str, exc: Exception) -> int:
    print(f"alarm: error in stage '{stage}': {exc}", file=sys.stderr)
    return EXIT_FAIL


def _usage(msg: str) -> int:
    print(f"alarm: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _config_from_args(args) -> pipeline.PipelineConfig:
    overrides = {
        "alpha": args.alpha,
        "circle_radius_mm": args.radius_mm,
        "volume_threshold_mm3": args.volume_threshold_mm3,
        "hu_cutoff": args.hu_cutoff,
        "flip_x": True if args.flip_x else None,
        "flip_y": True if args.flip_y else None,
        "flip_z": True if args.flip_z else None,
        "out_dir": args.out if args.command != "overlay" else None,
        "workers": getattr(args, "workers", None),
    }
    return pipeline.load_config(args.config, overrides)


def _stem(path: str) -> str:
    name = Path(path).name
    for suffix in (".nii.gz", ".nii", ".json", ".bin"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(name).stem


def _csv_text(rows: list[dict], fields=pipeline.ROW_FIELDS, header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    if header:
        w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _append_csv(path: Path, row: dict) -> None:
    existing = path.read_text() if path.exists() else ""
    text = existing + _csv_text([row], header=not existing)
    atomic_write_text(path, text)


# ------------------------------------------------------------------ measure


def cmd_measure(args) -> int:
    try:
        cfg = _config_from_args(args)
    except InvalidConfig as exc:
        return _usage(f"invalid configuration: {exc}")
    if args.segmenter and args.mask:
        return _usage("--mask and --segmenter are mutually exclusive")
    if args.segmenter:
        seg = cfg.segmenter.model_copy(update={"source": args.segmenter})
        if args.command:
            seg = seg.model_copy(update={"command_template": args.command})
        cfg = cfg.model_copy(update={"segmenter": seg})
        try:
            cfg.check()
        except InvalidConfig as exc:
            return _usage(f"invalid configuration: {exc}")

    out_dir = Path(cfg.out_dir or ".")
    try:
        rep = pipeline.run_measure(args.volume, args.mask, cfg)
    except PipelineError as exc:
        return _fail(exc.stage, exc.cause)
    report_path = out_dir / f"{args.id or _stem(args.volume)}.report.json"
    atomic_write_text(report_path, dumps(rep.to_dict()))
    if args.csv:
        row = pipeline.report_row(args.id or _stem(args.volume), args.volume, args.mask, rep)
        _append_csv(Path(args.csv), row)
    print(
        f"center-ROI {rep.center_roi.mean_hu:.1f} HU, periphery-ROI {rep.mean_of_three_hu:.1f} HU "
        f"(NAFLD center={rep.nafld_center}, periphery={rep.nafld_periphery}) -> {report_path}"
    )
    return EXIT_OK


# ------------------------------------------------------------------ batch


def read_manifest(path: Path) -> list[tuple[str, str, str | None]]:
    """Rows of (id, volume, mask-or-blank); an optional header row starting with 'id' is skipped."""
    base = path.parent
    items = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip() or row[0].startswith("#"):
                continue
            if i == 0 and row[0].strip().lower() == "id":
                continue
            if len(row) < 2 or not row[1].strip():
                raise UsageError(f"manifest line {i + 1}: need id and volume path")
            item_id, vol = row[0].strip(), row[1].strip()
            mask = row[2].strip() if len(row) > 2 and row[2].strip() else None
            vol = str(base / vol) if not Path(vol).is_absolute() else vol
            if mask is not None and not Path(mask).is_absolute():
                mask = str(base / mask)
            items.append((item_id, vol, mask))
    ids = [it[0] for it in items]
    if len(set(ids)) != len(ids):
        raise UsageError("manifest ids must be unique")
    return items


def summary_rows(rows: list[dict], cutoff: float) -> list[dict]:
    """Cohort statistics laid out in the cohort CSV columns, one row per statistic."""
    stats = {}
    for field in pipeline.NUMERIC_SUMMARY_FIELDS:
        vals = [float(r[field]) for r in rows if r[field] != ""]
        stats[field] = agree.summarize(vals, cutoff) if vals else None
    out = []
    for key in ("n", "mean", "sd", "median", "min", "max", "q25", "q75", "count_below_cutoff", "pct_below_cutoff"):
        row = {k: "" for k in pipeline.ROW_FIELDS}
        row["id"] = f"summary:{key}"
        for field, s in stats.items():
            if s is None or s[key] is None:
                continue
            row[field] = str(s[key]) if isinstance(s[key], int) else repr(round_sig(s[key]))
        out.append(row)
    return out


def run_batch(items, cfg: pipeline.PipelineConfig, workers: int = 1) -> list[tuple[dict, str | None]]:
    work = partial(pipeline.run_item, cfg=cfg)
    if workers <= 1 or len(items) <= 1:
        return [work(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves manifest order
        return list(pool.map(work, items))


def cmd_batch(args) -> int:
    try:
        cfg = _config_from_args(args)
        items = read_manifest(Path(args.manifest))
    except InvalidConfig as exc:
        return _usage(f"invalid configuration: {exc}")
    except (UsageError, OSError) as exc:
        return _usage(str(exc))
    if not items:
        return _usage("manifest lists no scans")

    out_dir = Path(cfg.out_dir or ".")
    results = run_batch(items, cfg, workers=cfg.workers)
    rows = []
    for (item_id, _, _), (row, report) in zip(items, results):
        rows.append(row)
        if report is not None:
            atomic_write_text(out_dir / f"{item_id}.report.json", report)
        else:
            print(f"alarm: {item_id}: {row['error']}", file=sys.stderr)
    ok = [r for r in rows if not r["error"]]
    text = _csv_text(rows)
    if ok:
        text += "\n" + _csv_text(summary_rows(ok, cfg.hu_cutoff), header=False)
    cohort = Path(args.csv) if args.csv else out_dir / "cohort.csv"
    atomic_write_text(cohort, text)
    failed = len(rows) - len(ok)
    print(f"{len(ok)} of {len(rows)} scans measured -> {cohort}")
    return EXIT_FAIL if failed else EXIT_OK


# ------------------------------------------------------------------ agree

HU_COLUMNS = ("hu", "periphery_hu", "mean_hu")


def read_predictions(path: Path, column: str | None) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "id" not in fields:
            raise UsageError(f"{path}: no 'id' column")
        col = column or next((c for c in HU_COLUMNS if c in fields), None)
        if col is None or col not in fields:
            raise UsageError(f"{path}: no HU column (tried {column or HU_COLUMNS})")
        out = {}
        for row in reader:
            rid = (row.get("id") or "").strip()
            val = (row.get(col) or "").strip()
            if not rid or rid.startswith("summary:") or not val:
                continue
            if rid in out:
                raise UsageError(f"{path}: duplicate id {rid!r}")
            out[rid] = float(val)
    return out


def agreement(a: dict[str, float], b: dict[str, float], cutoff: float) -> dict:
    """Kappa, Pearson and Bland-Altman of ``a`` (test) against ``b`` (reference)."""
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))[:5]
        only_b = sorted(set(b) - set(a))[:5]
        raise IdMismatch(f"ids differ (only in A: {only_a}, only in B: {only_b})")
    ids = sorted(a)
    xa = [a[i] for i in ids]
    xb = [b[i] for i in ids]
    cm = agree.ConfusionMatrix.from_labels(
        [agree.classify(x, cutoff) for x in xa], [agree.classify(x, cutoff) for x in xb]
    )
    out = {"n": len(ids), "cutoff": cutoff, "kappa": agree.kappa(cm).to_dict()}
    try:
        out["pearson_r"] = agree.pearson(xa, xb)
    except AlarmError:
        out["pearson_r"] = None
    ba = agree.bland_altman(xa, xb)
    out["bland_altman"] = {"bias": ba.bias, "sd": ba.sd, "loa_low": ba.loa_low, "loa_high": ba.loa_high}
    out["summary_a"] = agree.summarize(xa, cutoff)
    out["summary_b"] = agree.summarize(xb, cutoff)
    return out


def _fmt_pct(x) -> str:
    return "n/a" if x is None else f"{x:.1f}%"


def format_agreement(stats: dict) -> str:
    k = stats["kappa"]
    lo, hi = k["ci95"]
    r = stats["pearson_r"]
    ba = stats["bland_altman"]
    lines = [
        f"n                 {stats['n']}",
        f"cutoff            < {stats['cutoff']:g} HU",
        f"kappa             {k['kappa']:.3f}  ({k['band']})",
        f"95% CI            {lo:.2f} - {hi:.2f}",
        f"p                 {k['p_value']:.2g}",
        f"agreement         {_fmt_pct(k['agreement_pct'])}",
        f"sensitivity       {_fmt_pct(k['sensitivity'])}",
        f"specificity       {_fmt_pct(k['specificity'])}",
        f"pearson r         {'n/a' if r is None else f'{r:.3f}'}",
        f"bias (A-B)        {ba['bias']:.3f} HU",
        f"limits            {ba['loa_low']:.3f} .. {ba['loa_high']:.3f} HU",
    ]
    return "\n".join(lines)


def cmd_agree(args) -> int:
    try:
        a = read_predictions(Path(args.a), args.column_a or args.column)
        b = read_predictions(Path(args.b), args.column_b or args.column)
        stats = agreement(a, b, args.cutoff)
    except (UsageError, OSError, ValueError, IdMismatch) as exc:
        return _usage(str(exc))
    except AlarmError as exc:
        return _fail("agree", exc)
    text = dumps(stats)
    if args.out:
        atomic_write_text(Path(args.out), text)
    print(text if args.json else format_agreement(stats))
    return EXIT_OK


# ------------------------------------------------------------------ overlay


def cmd_overlay(args) -> int:
    try:
        cfg = _config_from_args(args)
    except InvalidConfig as exc:
        return _usage(f"invalid configuration: {exc}")
    window = tuple(args.window) if args.window else cfg.overlay_window
    if not window[0] < window[1]:
        return _usage("window low must be below high")
    try:
        report = json.loads(Path(args.report).read_text())
        report["periphery"]["geometry"]["z_c"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        return _usage(f"unreadable report {args.report}: {exc}")
    try:
        v = flip_axes(read_image(args.volume), cfg.flips)
        t = report.get("working_grid", {}).get("spacing", [WORKING_SPACING_MM])[0]
        if any(abs(s - t) > 1e-9 for s in v.spacing):
            v = resample_isotropic(v, t, "trilinear")
        img = overlay.render(v, report, window)
    except AlarmError as exc:
        return _fail("overlay", exc)
    out = Path(args.out)
    atomic_write_bytes(out, overlay.encode_ppm(img))
    print(f"overlay slice z={report['periphery']['geometry']['z_c']} -> {out}")
    return EXIT_OK


# ------------------------------------------------------------------ phantom


def cmd_phantom(args) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text())
        if not isinstance(raw, dict):
            raise InvalidSpec("phantom spec must be a JSON object")
        spec = phantom.PhantomSpec.from_dict(raw)
        vol, mask, meta = phantom.generate(spec)
    except (OSError, json.JSONDecodeError, InvalidSpec) as exc:
        return _usage(f"invalid phantom spec: {exc}")
    out = Path(args.out or ".")
    write_nifti(vol, out / "volume.nii")
    write_nifti(mask, out / "mask.nii")
    atomic_write_text(out / "truth.json", dumps(meta))
    print(f"phantom with {meta['counts']['mask']} liver voxels -> {out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_common(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("--config", help="pipeline configuration JSON")
    p.add_argument("--alpha", type=float, help="periphery circle placement coefficient (default 1/3)")
    p.add_argument("--radius-mm", type=float, help="periphery circle radius (default 7)")
    p.add_argument("--volume-threshold-mm3", type=float, help="center-ROI erosion target (default 1000)")
    p.add_argument("--hu-cutoff", type=float, help="steatosis cut point (default 40)")
    p.add_argument("--flip-x", action="store_true", help="mirror inputs along x before processing")
    p.add_argument("--flip-y", action="store_true")
    p.add_argument("--flip-z", action="store_true")
    if out:
        p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alarm", description="Automatic CT liver attenuation ROIs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measure", help="measure one scan")
    p.add_argument("volume", help="CT volume (.nii, .nii.gz, or raw .json/.bin)")
    p.add_argument("--mask", help="whole-liver mask on the volume grid")
    p.add_argument("--segmenter", choices=["threshold", "external"], help="segment instead of loading a mask")
    p.add_argument("--command", help="external segmenter template with {input} and {output}")
    p.add_argument("--id", help="scan id (default: volume file stem)")
    p.add_argument("--csv", help="append a summary row to this CSV")
    _add_common(p)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("batch", help="measure every scan in a manifest CSV")
    p.add_argument("manifest", help="CSV rows: id, volume path, mask path (may be blank)")
    p.add_argument("--csv", help="cohort CSV path (default <out>/cohort.csv)")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    _add_common(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("agree", help="agreement statistics between two prediction CSVs")
    p.add_argument("a", help="test predictions (e.g. automatic)")
    p.add_argument("b", help="reference predictions (e.g. manual)")
    p.add_argument("--cutoff", type=float, default=40.0)
    p.add_argument("--column", help="HU column in both files")
    p.add_argument("--column-a")
    p.add_argument("--column-b")
    p.add_argument("--out", help="write statistics JSON here")
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("overlay", help="render a QA overlay (binary PPM)")
    p.add_argument("volume")
    p.add_argument("report")
    p.add_argument("--out", required=True, help="output .ppm path")
    p.add_argument("--window", type=float, nargs=2, metavar=("LOW", "HIGH"))
    _add_common(p, out=False)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("phantom", help="write a synthetic phantom")
    p.add_argument("spec", help="phantom spec JSON")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_phantom)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
