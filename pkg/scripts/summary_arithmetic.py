"""Recompute derived report columns from reference perf values.

Feeds reference SBA, VBA and meta-learner NDCG values (three decimals) through
the report formulas and prints recomputed vs reference values with their
differences.

Usage: python3 scripts/summary_arithmetic.py
"""

from recmeta.experiment import ReportRow, average_row

# dataset: (SBA, VBA, user-only, user+algo), (gain vs SBA, gain vs user-only, gap closed)
REFERENCE = {
    "MovieLens": ((0.284, 0.616, 0.331, 0.332), (16.99, 0.27, 14.54)),
    "LastFM": ((0.038, 0.086, 0.049, 0.052), (38.56, 5.89, 29.90)),
    "BookCrossing": ((0.041, 0.072, 0.037, 0.040), (-3.89, 6.18, -4.97)),
    "RetailRocket": ((0.107, 0.181, 0.107, 0.106), (-0.84, -1.30, -1.26)),
    "Steam": ((0.163, 0.358, 0.200, 0.195), (19.16, -2.50, 16.10)),
    "Restaurants": ((0.150, 0.380, 0.083, 0.154), (2.46, 86.56, 1.64)),
    "Average": ((0.131, 0.282, 0.135, 0.147), (12.07, 8.83, 10.49)),
}
COLUMNS = ("gain_vs_sba", "gain_vs_user_ml", "gap_closed")


def row(name, perf):
    s, v, u, a = perf
    return ReportRow(name, "-", s, v, u, 0.0, 0.0, a, 0.0, 0.0)


def main():
    rows = {name: row(name, perf) for name, (perf, _) in REFERENCE.items()}
    rows["Average (from rows)"] = average_row([r for n, r in rows.items() if n != "Average"], "Average (from rows)")
    print(f"{'dataset':20s}" + "".join(f"{c:>28s}" for c in COLUMNS))
    for name, r in rows.items():
        reference = REFERENCE[name.split(" ")[0]][1]
        cells = [f"{getattr(r, c):8.2f} vs {p:7.2f} ({getattr(r, c) - p:+.2f})" for c, p in zip(COLUMNS, reference)]
        print(f"{name:20s}" + "".join(f"{x:>28s}" for x in cells))


if __name__ == "__main__":
    main()
