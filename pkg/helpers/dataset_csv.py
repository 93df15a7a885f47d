# helpers/dataset_csv.py
"""
One observation per CSV row, after a header line:

    y (m) | x (p) | vech Sigma_e (m(m+1)/2) | Sigma_ue (p*m, row-major) | vech Sigma_u (p(p+1)/2)
"""
import csv
from typing import List

import numpy as np

from model import Dataset, DatasetError, unvech, vech


def column_count(m: int, p: int) -> int:
    return m + p + m * (m + 1) // 2 + p * m + p * (p + 1) // 2


def header(m: int, p: int) -> List[str]:
    if m == 1 and p == 1:
        return ["y", "x", "var_e", "cov_ue", "var_u"]
    cols = [f"y{j + 1}" for j in range(m)] + [f"x{j + 1}" for j in range(p)]
    cols += [f"se_{r + 1}{c + 1}" for c in range(m) for r in range(c, m)]
    cols += [f"sue_{r + 1}{c + 1}" for r in range(p) for c in range(m)]
    cols += [f"su_{r + 1}{c + 1}" for c in range(p) for r in range(c, p)]
    return cols


def load_dataset(path: str, m: int, p: int) -> Dataset:
    width = column_count(m, p)
    ne, nue = m * (m + 1) // 2, p * m
    z, se, sue, su = [], [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file", line=1)
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DatasetError(f"line {line_no}: expected {width} columns, got {len(row)}", line=line_no)
            try:
                vals = np.array([float(c) for c in row])
            except ValueError:
                raise DatasetError(f"line {line_no}: non-numeric entry", line=line_no)
            if not np.all(np.isfinite(vals)):
                raise DatasetError(f"line {line_no}: non-finite entry", line=line_no)
            z.append(vals[:m + p])
            rest = vals[m + p:]
            se.append(unvech(rest[:ne], m))
            sue.append(rest[ne:ne + nue].reshape(p, m))
            su.append(unvech(rest[ne + nue:], p))
    if not z:
        raise DatasetError(f"{path}: no observations")
    try:
        return Dataset(np.array(z), np.array(se), np.array(sue), np.array(su), m, p)
    except DatasetError as e:
        line = e.row + 2 if e.row is not None else None
        raise DatasetError(f"line {line}: {e}" if line else str(e), row=e.row, line=line)


def write_dataset(path: str, data: Dataset):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header(data.m, data.p))
        for i in range(data.n):
            row = np.concatenate([data.z[i], vech(data.sigma_e[i]),
                                  data.sigma_ue[i].reshape(-1), vech(data.sigma_u[i])])
            writer.writerow([repr(float(v)) for v in row])
