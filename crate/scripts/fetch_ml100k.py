#!/usr/bin/env python3
"""Materialize MovieLens 100K as a tab-separated u.data file.

grouplens.org is the canonical source. When it is unreachable, the same
100,000 ratings are read from the copy bundled in the pytorch-widedeep wheel
on PyPI (the wheel is downloaded, never installed).
"""
import io
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

DEST = os.path.join(os.path.dirname(__file__), "..", "data", "ml-100k", "u.data")
GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens():
    with urllib.request.urlopen(GROUPLENS, timeout=20) as resp:
        z = zipfile.ZipFile(io.BytesIO(resp.read()))
    return z.read("ml-100k/u.data")


def from_wheel():
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "pytorch-widedeep==1.7.0", "-d", tmp],
            check=True,
        )
        wheel = next(f for f in os.listdir(tmp) if f.endswith(".whl"))
        z = zipfile.ZipFile(os.path.join(tmp, wheel))
        raw = z.read("pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli")
    df = pd.read_parquet(io.BytesIO(raw))
    lines = (
        f"{u}\t{i}\t{r}\t{t}\n"
        for u, i, r, t in df[["user_id", "movie_id", "rating", "timestamp"]].itertuples(index=False)
    )
    return "".join(lines).encode()


def main():
    os.makedirs(os.path.dirname(DEST), exist_ok=True)
    try:
        data = from_grouplens()
    except Exception as err:  # noqa: BLE001
        print(f"grouplens unavailable ({err}); using PyPI wheel copy", file=sys.stderr)
        data = from_wheel()
    with open(DEST, "wb") as f:
        f.write(data)
    count = data.count(b"\n")
    print(f"wrote {count} ratings to {os.path.normpath(DEST)}")


if __name__ == "__main__":
    main()
