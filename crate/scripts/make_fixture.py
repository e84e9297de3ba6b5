"""Writes a synthetic 500-row student file in the NELS column layout."""

import csv
from pathlib import Path

import numpy as np

COLUMNS = [
    "F2SES1", "F22XRSTD", "F22XMSTD", "F22XSSTD", "F22XHSTD",
    "F2RHENG2", "F2RHMAG2", "F2RHSCG2", "F2RHSOG2", "F2RHFOG2", "F3ATTEND",
]


def main(path: Path, n: int = 500, seed: int = 1988) -> None:
    rng = np.random.default_rng(seed)
    ses = rng.normal(-0.05, 0.75, n)
    ability = rng.normal(0.0, 1.0, n)
    tests = 52 + 6 * ability[:, None] + 2.5 * ses[:, None] + rng.normal(0, 5, (n, 4))
    tests = np.clip(tests, 30, 75)
    # 1 is the best grade, 13 the worst
    grades = 6.5 - 1.8 * ability[:, None] - 0.8 * ses[:, None] + rng.normal(0, 1.5, (n, 5))
    grades = np.clip(grades, 1, 13)
    attend = np.clip(14 + 4 * ses + 3 * ability + rng.normal(0, 5, n), 1, 27)
    table = np.column_stack([ses, tests, grades, attend])
    missing = rng.random(table.shape) < 0.03
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(COLUMNS)
        for row, miss in zip(table, missing):
            w.writerow(["" if m else f"{v:.3f}" for v, m in zip(row, miss)])


if __name__ == "__main__":
    main(Path(__file__).resolve().parent.parent / "data" / "students_synthetic.csv")
