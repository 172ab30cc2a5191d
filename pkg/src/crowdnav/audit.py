"""Recompute a benchmark's results table from its per-episode logs.

Usage: ``python -m crowdnav.audit OUT_DIR`` where OUT_DIR holds
``results.csv`` and ``logs/<controller>/episode_*.csv`` with their
``.json`` sidecars. Exits 0 when every number matches, 2 otherwise.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

from .benchmark import ResultRow, ResultsTable, log_dir_name, read_results
from .simulator import NO_EVENT, classify_collision, delay, read_event_log


class AuditError(ValueError):
    pass


def audit_episode(csv_path: Path) -> dict:
    """Counts and outcome of one episode, cross-checked between the CSV and its sidecar."""
    meta = json.loads(csv_path.with_suffix(".json").read_text(encoding="utf-8"))
    rows = read_event_log(csv_path)
    ticks = sorted({r["tick"] for r in rows})
    if ticks != list(range(1, meta["steps_taken"] + 1)) and meta["outcome"] != "error":
        raise AuditError(f"{csv_path}: ticks do not cover 1..{meta['steps_taken']}")
    counts = {"SR": 0, "SP": 0, "MRP": 0}
    logged = [(r["tick"], r["event_type"], r["pedestrian_id"]) for r in rows if r["event_type"] != NO_EVENT]
    for (tick, kind, pid), ev in zip(logged, meta["events"]):
        if (tick, kind, pid) != (ev["tick"], ev["type"], ev["pedestrian_id"]):
            raise AuditError(f"{csv_path}: event rows disagree with the sidecar")
        if classify_collision(ev["robot_moved"], ev["ped_moved"]) != kind:
            raise AuditError(f"{csv_path}: tick {tick} logged as {kind} but movement flags disagree")
        if ev["robot_moved"] != meta["moved"][tick - 1]:
            raise AuditError(f"{csv_path}: tick {tick} robot movement flag mismatch")
        counts[kind] += 1
    if len(logged) != len(meta["events"]):
        raise AuditError(f"{csv_path}: event count mismatch")
    if meta["reached_goal"]:
        last = rows[-1]
        goal = tuple(meta["episode"]["goal"])
        if (last["robot_col"], last["robot_row"]) != goal:
            raise AuditError(f"{csv_path}: reached_goal but final cell is not the goal")
    return {"meta": meta, **counts}


def recompute_row(directory: Path, controller: str) -> ResultRow:
    logs = sorted(p for p in directory.glob("episode_*.csv") if p.suffixes == [".csv"])
    episodes = [audit_episode(p) for p in logs]
    delays = [
        delay(e["meta"]["optimal_steps"], e["meta"]["steps_taken"])
        for e in episodes if e["meta"]["reached_goal"]
    ]
    return ResultRow(
        controller=controller,
        episodes=len(episodes),
        reached=sum(e["meta"]["reached_goal"] for e in episodes),
        failures=sum(e["meta"]["outcome"] == "error" for e in episodes),
        mean_delay=math.fsum(delays) / len(delays) if delays else None,
        sr=sum(e["SR"] for e in episodes),
        sp=sum(e["SP"] for e in episodes),
        mrp=sum(e["MRP"] for e in episodes),
        stall_ticks=sum(e["meta"]["stall_ticks"] for e in episodes),
    )


def audit(out_dir: str | Path) -> ResultsTable:
    """Recompute every row of ``out_dir/results.csv``; raise AuditError on any mismatch."""
    out_dir = Path(out_dir)
    table = read_results(out_dir / "results.csv")
    rows = []
    for row in table.rows:
        again = recompute_row(out_dir / "logs" / log_dir_name(row.controller), row.controller)
        if row != again:
            raise AuditError(f"{row.controller}: table says {row}, logs give {again}")
        rows.append(again)
    return ResultsTable(rows, dict(table.metadata))


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print(__doc__.strip(), file=sys.stderr)
        return 1
    try:
        table = audit(argv[0])
    except (AuditError, OSError, ValueError) as exc:
        print(f"audit failed: {exc}", file=sys.stderr)
        return 2
    print(f"audit ok: {len(table.rows)} controller row(s) recomputed from logs")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
