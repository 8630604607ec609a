#!/usr/bin/env python3
"""Flat-line baseline for a fitted cohort.

Predicts every scan of a held-out split by the per-region mean over all
training scans, ignoring time, and prints the resulting SSE as JSON. Any
trajectory model worth keeping should beat this number.

    scripts/flat_baseline.py --cohort cohort.jsonl --report report.json [--split test]
"""

import argparse
import json
import sys


def read_cohort(path):
    with open(path) as f:
        return {s["id"]: s for s in (json.loads(line) for line in f if line.strip())}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cohort", required=True, help="subjects, one JSON object per line")
    ap.add_argument("--report", required=True, help="report.json written by `stagemoe fit`")
    ap.add_argument("--split", default="test", choices=["val", "test"])
    args = ap.parse_args()

    subjects = read_cohort(args.cohort)
    with open(args.report) as f:
        split = json.load(f)["split"]

    train_rows = [row for sid in split["train"] for row in subjects[sid]["obs"]]
    if not train_rows:
        sys.exit("training split has no scans")
    n = len(train_rows[0])
    mean = [sum(r[u] for r in train_rows) / len(train_rows) for u in range(n)]

    held_out = split[args.split]
    sse = 0.0
    scans = 0
    for sid in held_out:
        for row in subjects[sid]["obs"]:
            sse += sum((x - m) ** 2 for x, m in zip(row, mean))
            scans += 1
    json.dump({"split": args.split, "subjects": len(held_out), "scans": scans, "sse": sse}, sys.stdout, indent=2)
    print()


if __name__ == "__main__":
    main()
