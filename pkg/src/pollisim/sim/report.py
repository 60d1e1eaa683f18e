"""Campaign aggregation and export.

Turns a list of per-trial results into three artifacts: a per-trial CSV, a
per-attempt CSV, and a per-scenario summary (CSV + plain-text table) with an
overall row.  All numeric formatting is fixed so identical campaigns produce
byte-identical files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

TRIALS_HEADER = ["scenario", "trial", "seed", "reachable", "seen", "confirmed",
                 "false_positives", "attempted", "touched", "pollinated"]
ATTEMPTS_HEADER = ["scenario", "trial", "track_id", "flower_index", "planned",
                   "servo_phase", "servo_steps", "touched", "pollinated",
                   "orientation_ok", "miss_distance"]
REPORT_HEADER = ["scenario", "trials", "reachable", "avg_seen", "pct_touched",
                 "pct_pollinated", "pct_missed", "detection_accuracy",
                 "false_positives"]


@dataclass(frozen=True)
class ScenarioReport:
    """One summary row: a single scenario, or the whole campaign."""

    scenario: str
    trials: int
    reachable: float
    avg_seen: float
    pct_touched: float | None
    pct_pollinated: float | None
    pct_missed: float | None
    detection_accuracy: float | None
    false_positives: int


def _pct(numerator: int, denominator: int) -> float | None:
    if denominator <= 0:
        return None
    return 100.0 * numerator / denominator


def _summarize(label: str, results) -> ScenarioReport:
    trials = len(results)
    reach = sum(r.reachable for r in results)
    seen = sum(r.seen for r in results)
    att = sum(r.attempted for r in results)
    touched = sum(r.touched for r in results)
    poll = sum(r.pollinated for r in results)
    fp = sum(r.false_positives for r in results)
    pct_t = _pct(touched, att)
    return ScenarioReport(
        scenario=label,
        trials=trials,
        reachable=reach / trials if trials else 0.0,
        avg_seen=seen / trials if trials else 0.0,
        pct_touched=pct_t,
        pct_pollinated=_pct(poll, att),
        pct_missed=None if pct_t is None else 100.0 - pct_t,
        detection_accuracy=_pct(seen, reach),
        false_positives=fp)


def aggregate_report(results) -> list[ScenarioReport]:
    """Per-scenario rows (ascending scenario id) plus a final overall row."""
    if not results:
        raise ValueError("no trial results to aggregate")
    rows = []
    for s in sorted({r.scenario for r in results}):
        rows.append(_summarize(str(s), [r for r in results if r.scenario == s]))
    rows.append(_summarize("overall", list(results)))
    return rows


def _fmt(value, digits: int = 4) -> str:
    if value is None:
        return ""
    if float(value).is_integer():
        return str(int(value))
    return f"{value:.{digits}f}"


def write_trials_csv(results, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRIALS_HEADER)
        for r in results:
            w.writerow([r.scenario, r.trial, r.seed, r.reachable, r.seen,
                        r.confirmed, r.false_positives, r.attempted,
                        r.touched, r.pollinated])


def write_attempts_csv(results, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ATTEMPTS_HEADER)
        for r in results:
            for a in r.attempts:
                miss = "" if not math.isfinite(a.miss_distance) \
                    else f"{a.miss_distance:.6f}"
                w.writerow([r.scenario, r.trial, a.track_id, a.flower_index,
                            int(a.planned), a.servo_phase, a.servo_steps,
                            int(a.touched), int(a.pollinated),
                            int(a.orientation_ok), miss])


def write_report_csv(reports, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow([r.scenario, r.trials, _fmt(r.reachable),
                        _fmt(r.avg_seen), _fmt(r.pct_touched),
                        _fmt(r.pct_pollinated), _fmt(r.pct_missed),
                        _fmt(r.detection_accuracy), r.false_positives])


def _cell(value, digits: int = 1) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def format_report_table(reports) -> str:
    header = (f"{'scenario':<9} {'trials':>6} {'reach':>6} {'seen':>6} "
              f"{'touch%':>7} {'poll%':>7} {'miss%':>7} {'detect%':>8} "
              f"{'fp':>4}")
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.scenario:<9} {r.trials:>6} {_cell(r.reachable):>6} "
            f"{_cell(r.avg_seen):>6} {_cell(r.pct_touched):>7} "
            f"{_cell(r.pct_pollinated):>7} {_cell(r.pct_missed):>7} "
            f"{_cell(r.detection_accuracy):>8} {r.false_positives:>4}")
    return "\n".join(lines)


def load_trials_csv(path) -> list[dict]:
    """Per-trial rows back as dicts of ints (seed included)."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        return [{k: int(v) for k, v in row.items()} for row in reader]


def recompute_overall(rows) -> dict:
    """Overall campaign metrics straight from per-trial CSV rows.

    Independent of aggregate_report on purpose: it sees only the flat CSV
    fields, so it cross-checks the summary pipeline.
    """
    reach = sum(r["reachable"] for r in rows)
    seen = sum(r["seen"] for r in rows)
    att = sum(r["attempted"] for r in rows)
    touched = sum(r["touched"] for r in rows)
    poll = sum(r["pollinated"] for r in rows)
    return {
        "trials": len(rows),
        "detection_accuracy": _pct(seen, reach),
        "pct_touched": _pct(touched, att),
        "pct_pollinated": _pct(poll, att),
        "false_positives": sum(r["false_positives"] for r in rows),
    }
