"""Fusion-mode x local-variant grid: short training runs and a comparison report."""

from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .config import RunConfig
from .gcn import VARIANTS
from .heads import FUSION_MODES
from .train import evaluate, infer, prepare_samples, top1_tious, train

logger = logging.getLogger(__name__)


@dataclass
class CellResult:
    fusion: str
    local_variant: str
    first_loss: float
    last_loss: float
    report: dict
    mean_top1_tiou: float
    seconds: float
    halted: str | None = None

    @property
    def decreased(self) -> bool:
        return self.halted is None and self.last_loss < self.first_loss

    def row(self) -> dict:
        return {"fusion": self.fusion, "local_variant": self.local_variant,
                "first_loss": self.first_loss, "last_loss": self.last_loss,
                "loss_decreased": self.decreased, "AUC": self.report["AUC"],
                "AR@1": self.report["AR@1"], "AR@10": self.report["AR@10"],
                "mean_top1_tiou": self.mean_top1_tiou, "seconds": self.seconds,
                "halted": self.halted}


def run_ablation(base: RunConfig, videos, fusions=FUSION_MODES, variants=VARIANTS,
                 epochs: int | None = None, out_dir=None) -> list[CellResult]:
    """Train one model per (fusion, variant) cell on ``videos`` and evaluate
    it on the same videos. Writes ``<fusion>__<variant>.json`` per cell and a
    ``summary.json`` / ``summary.md`` pair when ``out_dir`` is given."""
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    gts = {seq.video_id: gt for seq, gt in videos}
    results = []
    for fusion, variant in itertools.product(fusions, variants):
        cfg = replace(base, fusion=fusion, local_variant=variant).validate()
        t0 = time.perf_counter()
        samples = prepare_samples(cfg, videos)
        res = train(cfg, None, samples=samples, epochs=epochs)
        props = infer(res.model, [seq for seq, _ in videos], cfg)
        report = evaluate(props, gts, cfg.mode).to_dict()
        top1 = top1_tious(props, gts)
        losses = res.losses or [float("nan")]
        cell = CellResult(fusion, variant, losses[0], losses[-1], report,
                          sum(top1.values()) / max(len(top1), 1), time.perf_counter() - t0,
                          res.halted)
        logger.info("ablation %-6s %-14s loss %.4f -> %.4f  AUC %.2f", fusion, variant,
                    cell.first_loss, cell.last_loss, report["AUC"])
        results.append(cell)
        if out_dir is not None:
            (out_dir / f"{fusion}__{variant}.json").write_text(json.dumps(
                {**cell.row(), "report": report, "loss_curve": res.losses}, indent=2))
    if out_dir is not None:
        (out_dir / "summary.json").write_text(json.dumps([c.row() for c in results], indent=2))
        (out_dir / "summary.md").write_text(format_summary(results))
    return results


def format_summary(results: list[CellResult]) -> str:
    lines = ["| fusion | local variant | loss first | loss last | AUC | AR@1 | AR@10 | top-1 tIoU |",
             "|---|---|---|---|---|---|---|---|"]
    for c in results:
        r = c.report
        lines.append(f"| {c.fusion} | {c.local_variant} | {c.first_loss:.4f} | {c.last_loss:.4f} "
                     f"| {r['AUC']:.2f} | {r['AR@1']:.2f} | {r['AR@10']:.2f} "
                     f"| {c.mean_top1_tiou:.3f} |")
    best = max(results, key=lambda c: c.report["AUC"]) if results else None
    if best is not None:
        lines.append("")
        lines.append(f"best AUC: {best.fusion} / {best.local_variant} ({best.report['AUC']:.2f})")
    return "\n".join(lines) + "\n"
