"""
Compression and scan benchmark for the segment store.
- Generates seeded synthetic PAR days
- Compresses each epsilon into a fresh store, seals every day
- Reports points before/after, segment bytes vs raw bytes, seal and scan throughput

Usage:
    python scripts/bench_store.py --days 3 --epsilons 1,5,25 --out bench.csv
"""
import argparse
import tempfile
import time
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import polars as pl

from app.core.rdp import simplify
from app.core.synth import generate_par
from app.schemas import SECONDS_PER_DAY, QuerySpec, SynthSpec
from app.store.engine import SegmentStore

RAW_BYTES_PER_POINT = 12  # u32 offset + f64 value, uncompressed


def bench_epsilon(history, epsilon: float, root: Path, scans: int) -> dict:
    days = len(history) // SECONDS_PER_DAY
    first = history.timestamps[0]
    last_day = date(1970, 1, 1) + timedelta(days=int(history.timestamps[-1]) // SECONDS_PER_DAY)
    clock = lambda: datetime.combine(last_day + timedelta(days=2), datetime.min.time(), timezone.utc)

    with SegmentStore(root, clock=clock) as store:
        t = time.perf_counter()
        kept = simplify(history, epsilon)
        compress_s = time.perf_counter() - t
        store.append(1, kept)

        t = time.perf_counter()
        for day, _ in store.days(1):
            store.seal_day(1, day)
        seal_s = time.perf_counter() - t
        seg_bytes = sum(p.stat().st_size for p in (root / "1").glob("*.seg"))

    # every scan decodes and checksums the segment files again
    with SegmentStore(root, clock=clock) as store:
        spec = QuerySpec(sensor=1, start=int(first), end=int(first) + days * SECONDS_PER_DAY - 1)
        t = time.perf_counter()
        for _ in range(scans):
            store.query(spec)
        scan_s = (time.perf_counter() - t) / scans

        grid = QuerySpec(sensor=1, start=spec.start, end=spec.end, materialize=1)
        t = time.perf_counter()
        store.query(grid)
        materialize_s = time.perf_counter() - t

    return {
        "epsilon": epsilon,
        "points_before": len(history),
        "points_after": len(kept),
        "reduction": 1 - len(kept) / len(history),
        "raw_bytes": len(history) * RAW_BYTES_PER_POINT,
        "segment_bytes": seg_bytes,
        "compress_s": round(compress_s, 4),
        "seal_s": round(seal_s, 4),
        "scan_points_per_s": round(len(kept) / scan_s) if scan_s else None,
        "materialize_points_per_s": round(len(history) / materialize_s) if materialize_s else None,
    }


def main():
    parser = argparse.ArgumentParser(description="Benchmark RDP compression and segment scans.")
    parser.add_argument("--days", type=int, default=3)
    parser.add_argument("--epsilons", default="1,5,10,25")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--scans", type=int, default=5)
    parser.add_argument("--out", help="also write the table to this CSV file")
    args = parser.parse_args()

    epsilons = [float(e) for e in args.epsilons.split(",") if e.strip()]
    history = generate_par(SynthSpec(days=args.days, start_day=date(2024, 6, 1), seed=args.seed))
    print(f"Generated {len(history)} points over {args.days} days, seed={args.seed}.")

    rows = []
    with tempfile.TemporaryDirectory(prefix="sv-bench-") as tmp:
        for eps in epsilons:
            rows.append(bench_epsilon(history, eps, Path(tmp) / f"eps-{eps:g}", args.scans))
            print(f"eps={eps:g}: {rows[-1]['points_after']} points kept, {rows[-1]['segment_bytes']} segment bytes")

    table = pl.DataFrame(rows)
    with pl.Config(tbl_cols=-1, tbl_width_chars=200):
        print(table)
    if args.out:
        table.write_csv(args.out)
        print(f"Saved results to {args.out}")


if __name__ == "__main__":
    main()
