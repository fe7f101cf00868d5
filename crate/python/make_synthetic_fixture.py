"""Regenerates fixtures/synthetic_8x10x4.csv.

Eight nitrogen doses, ten plants each. Growth and nutrient uptake peak at an
intermediate dose; sodium accumulates at high doses. Plant height is recorded
but not part of the default evaluation.
"""

import csv
import math
import random
from pathlib import Path

DOSES = [20, 40, 80, 120, 160, 200, 400, 800]
PLANTS = 10
SEED = 20240611


def response(dose, peak, width, low, high):
    x = math.log(dose / peak) / width
    return low + (high - low) * math.exp(-x * x)


def main():
    rng = random.Random(SEED)
    out = Path(__file__).resolve().parent.parent / "fixtures" / "synthetic_8x10x4.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["treatment", "individual", "feature", "value"])
        for dose in DOSES:
            means = {
                "dry_weight": response(dose, 200, 1.2, 2.0, 6.5),
                "calcium": response(dose, 160, 1.5, 8.0, 14.0),
                "potassium": response(dose, 250, 1.4, 20.0, 32.0),
                "sodium": 1.0 + 0.004 * dose,
                "height": response(dose, 300, 1.6, 18.0, 40.0),
            }
            sds = {"dry_weight": 0.6, "calcium": 1.2, "potassium": 2.5, "sodium": 0.5, "height": 3.0}
            for plant in range(1, PLANTS + 1):
                for feature, mu in means.items():
                    value = max(0.01, rng.gauss(mu, sds[feature]))
                    w.writerow([f"N{dose}", plant, feature, f"{value:.3f}"])


if __name__ == "__main__":
    main()
