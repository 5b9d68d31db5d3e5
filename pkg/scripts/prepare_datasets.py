"""Materialize the benchmark CSVs under data/.

Sources: the UCI copies bundled with scikit-learn (iris, wine) and the KEEL
repository copies bundled in the ``keel-ds`` wheel (sonar, heart, ionosphere,
wisconsin).  Every output file has a header row and the class label in the
last column, named ``label``.

    python scripts/prepare_datasets.py [path/to/keel_ds-*.whl]
"""
import csv
import io
import sys
import zipfile
from pathlib import Path

from sklearn import datasets

OUT = Path(__file__).resolve().parent.parent / "data"
KEEL = {"sonar": "sonar", "heart": "heart", "ionosphere": "ionosphere", "breast": "wisconsin"}


def write(name, rows, n_features):
    header = [f"x{j + 1}" for j in range(n_features)] + ["label"]
    with open(OUT / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"{name}: {len(rows)} rows, {n_features} features")


def from_sklearn(name, loader):
    bunch = loader()
    rows = [[repr(float(v)) for v in x] + [str(y)] for x, y in zip(bunch.data, bunch.target)]
    write(name, rows, bunch.data.shape[1])


def from_keel(wheel):
    with zipfile.ZipFile(wheel) as z:
        for name, keel_name in KEEL.items():
            text = z.read(f"keel_ds/data/balanced/raw/{keel_name}.dat").decode()
            rows = []
            for line in io.StringIO(text):
                line = line.strip()
                if not line or line.startswith("@"):
                    continue
                cells = [c.strip() for c in line.split(",")]
                rows.append(cells)
            write(name, rows, len(rows[0]) - 1)


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    from_sklearn("iris", datasets.load_iris)
    from_sklearn("wine", datasets.load_wine)
    wheel = sys.argv[1] if len(sys.argv) > 1 else next(Path("/tmp/dl").glob("keel_ds-*.whl"))
    from_keel(wheel)
