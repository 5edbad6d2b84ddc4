"""Regenerate fixtures/toy_interactions.csv and print its counts.

Usage: python3 scripts/make_toy_fixture.py [output.csv]
"""

import csv
import sys
from pathlib import Path

from recmeta.dataset import Schema, dataset_stats, filter_min_interactions, load_interactions
from recmeta.synthetic import toy_interactions

ROOT = Path(__file__).resolve().parents[1]


def main(argv):
    out = Path(argv[1]) if len(argv) > 1 else ROOT / "fixtures" / "toy_interactions.csv"
    rows = toy_interactions()
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "item_id", "timestamp", "rating"])
        for r in rows:
            w.writerow([r.user_id, r.item_id, r.timestamp, int(r.rating)])
    ds = load_interactions(out, schema=Schema(rating="rating"))
    raw = dataset_stats(ds)
    kept = dataset_stats(filter_min_interactions(ds, 10))
    print(f"raw:      {raw}")
    print(f"filtered: {kept}")


if __name__ == "__main__":
    main(sys.argv)
