#!/usr/bin/env python3
"""Rebuild the raw MovieLens 100K files from the copy bundled in the
pytorch-widedeep wheel (used where files.grouplens.org is unreachable).

Writes u.data, u.user, u.item and the five u{K}.base / u{K}.test splits,
following the mku.sh recipe shipped with the original archive.

    pip download --no-deps pytorch-widedeep==1.7.0 -d /tmp/wd
    python3 tools/rebuild_ml100k.py /tmp/wd/pytorch_widedeep-1.7.0-py3-none-any.whl data/ml-100k
"""
import io
import math
import sys
import zipfile
from pathlib import Path

import pandas as pd


def read(z, name):
    raw = z.read(f"pytorch_widedeep/datasets/data/MovieLens100k_{name}.parquet.brotli")
    return pd.read_parquet(io.BytesIO(raw))


def cell(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return str(v)


def main():
    wheel, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    z = zipfile.ZipFile(wheel)
    data, items, users = read(z, "data"), read(z, "items"), read(z, "users")

    lines = [f"{r.user_id}\t{r.movie_id}\t{r.rating}\t{r.timestamp}" for r in data.itertuples()]
    (out / "u.data").write_text("\n".join(lines) + "\n")

    with open(out / "u.user", "w") as f:
        for r in users.itertuples():
            f.write(f"{r.user_id}|{r.age}|{r.gender}|{r.occupation}|{r.zip_code}\n")

    with open(out / "u.item", "w", encoding="latin-1") as f:
        for row in items.itertuples(index=False):
            f.write("|".join(cell(v) for v in row) + "\n")

    def key(line):
        u, i = line.split("\t")[:2]
        return (int(u), int(i))

    for k in range(1, 6):
        test = lines[(k - 1) * 20000:k * 20000]
        base = lines[:(k - 1) * 20000] + lines[k * 20000:]
        (out / f"u{k}.test").write_text("\n".join(sorted(test, key=key)) + "\n")
        (out / f"u{k}.base").write_text("\n".join(sorted(base, key=key)) + "\n")


if __name__ == "__main__":
    main()
