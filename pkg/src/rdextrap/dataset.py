"""Multi-cutoff RD data container: loading, validation and filtered views.

A :class:`Dataset` is an immutable column store over observations
``(y, x, c, d[, z])`` where ``c`` is the cutoff the unit faces and ``d`` its
treatment status.  Views produced by :meth:`Dataset.subset` share the parent's
column storage and are safe to pass around concurrently; nothing in this
module mutates data after construction.
"""

import csv
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import (
    DataError,
    MissingColumn,
    ParseError,
    SharpComplianceViolation,
    UnknownCutoff,
)

DESIGNS = ("sharp", "fuzzy")


class Observation(NamedTuple):
    y: float
    x: float
    c: float
    d: int
    z: tuple | None = None


class Dataset:
    """Immutable view over multi-cutoff RD observations.

    Root datasets are built with :func:`load_dataset` or
    :meth:`Dataset.from_arrays`, which validate every observation.  Subsets
    reference the root's arrays through an index and skip re-validation.
    """

    def __init__(self, y, x, c, d, z, cutoffs, design, rows=None, _validated=False):
        if not _validated:
            raise TypeError("use Dataset.from_arrays or load_dataset")
        self._y = y
        self._x = x
        self._c = c
        self._d = d
        self._z = z
        self.cutoffs = cutoffs
        self.design = design
        # indices into the root dataset's rows, for provenance
        self.rows = np.arange(len(y)) if rows is None else rows
        self.rows.setflags(write=False)

    @classmethod
    def from_arrays(cls, y, x, c, d=None, z=None, design="sharp"):
        """Validate raw columns and build a root dataset.

        In sharp designs ``d`` may be omitted and is derived from the
        assignment rule ``d = 1(x >= c)``; if supplied it must obey that rule.
        """
        if design not in DESIGNS:
            raise DataError(f"design must be one of {DESIGNS}, got {design!r}")
        y = np.ascontiguousarray(y, dtype=np.float64)
        x = np.ascontiguousarray(x, dtype=np.float64)
        c = np.ascontiguousarray(c, dtype=np.float64)
        n = len(y)
        if not (len(x) == len(c) == n):
            raise DataError("y, x, c must have equal length")
        for name, col in (("y", y), ("x", x), ("c", c)):
            bad = np.flatnonzero(~np.isfinite(col))
            if bad.size:
                raise ParseError(int(bad[0]) + 1, f"non-finite value in column {name!r}")
        if d is None:
            if design == "fuzzy":
                raise MissingColumn("d")
            d = (x >= c).astype(np.float64)
        else:
            d = np.ascontiguousarray(d, dtype=np.float64)
            if len(d) != n:
                raise DataError("d must have the same length as y")
            bad = np.flatnonzero(~np.isin(d, (0.0, 1.0)))
            if bad.size:
                raise ParseError(int(bad[0]) + 1, "treatment status must be 0 or 1")
            if design == "sharp":
                bad = np.flatnonzero(d != (x >= c))
                if bad.size:
                    raise SharpComplianceViolation(int(bad[0]) + 1)
        if z is not None:
            z = np.asarray(z, dtype=object)
            if z.ndim == 1:
                z = z.reshape(-1, 1)
            if len(z) != n:
                raise DataError("z must have the same length as y")
        cutoffs = tuple(sorted(set(c.tolist())))
        counts = {cut: int(np.sum(c == cut)) for cut in cutoffs}
        thin = [cut for cut, m in counts.items() if m < 2]
        if thin:
            raise DataError(f"fewer than 2 observations facing cutoff(s) {thin}")
        for arr in (y, x, c, d):
            arr.setflags(write=False)
        if z is not None:
            z.setflags(write=False)
        return cls(y, x, c, d, z, cutoffs, design, _validated=True)

    # -- column access ------------------------------------------------------

    @property
    def y(self):
        return self._y

    @property
    def x(self):
        return self._x

    @property
    def c(self):
        return self._c

    @property
    def d(self):
        return self._d

    @property
    def z(self):
        return self._z

    @property
    def has_covariates(self):
        return self._z is not None

    def __len__(self):
        return len(self._y)

    @property
    def n(self):
        return len(self._y)

    @property
    def observations(self):
        zs = self._z
        return [
            Observation(
                float(self._y[i]),
                float(self._x[i]),
                float(self._c[i]),
                int(self._d[i]),
                tuple(zs[i]) if zs is not None else None,
            )
            for i in range(len(self._y))
        ]

    def z_cells(self):
        """Distinct covariate label combinations, in first-appearance order."""
        if self._z is None:
            return []
        seen = {}
        for row in self._z:
            seen.setdefault(tuple(row), None)
        return list(seen)

    # -- filtering ----------------------------------------------------------

    def subset(self, cutoff=None, treated=None, window=None, assigned=None, z=None):
        """Read-only view of the rows matching every given filter.

        ``treated`` filters on observed status ``d``; ``assigned`` filters on
        the assignment rule ``1(x >= c)`` (identical to ``treated`` in sharp
        designs).  ``window`` is a closed interval ``(lo, hi)`` on the score.
        """
        mask = np.ones(len(self._y), dtype=bool)
        if cutoff is not None:
            wanted = (cutoff,) if np.isscalar(cutoff) else tuple(cutoff)
            for cut in wanted:
                if cut not in self.cutoffs:
                    raise UnknownCutoff(cut)
            mask &= np.isin(self._c, wanted)
        if treated is not None:
            mask &= self._d == treated
        if assigned is not None:
            mask &= (self._x >= self._c) == bool(assigned)
        if window is not None:
            lo, hi = window
            mask &= (self._x >= lo) & (self._x <= hi)
        if z is not None:
            if self._z is None:
                raise DataError("dataset has no covariates to filter on")
            key = tuple(np.atleast_1d(np.asarray(z, dtype=object)))
            zmatch = np.fromiter(
                (tuple(row) == key for row in self._z),
                dtype=bool,
                count=len(self._y),
            )
            mask &= zmatch
        idx = np.flatnonzero(mask)
        return self._take(idx)

    def _take(self, idx):
        cols = [self._y[idx], self._x[idx], self._c[idx], self._d[idx]]
        z = self._z[idx] if self._z is not None else None
        for arr in cols:
            arr.setflags(write=False)
        return Dataset(
            cols[0], cols[1], cols[2], cols[3], z,
            self.cutoffs, self.design, rows=self.rows[idx], _validated=True,
        )

    def same_rows(self, other):
        """Whether two views select exactly the same underlying rows."""
        return self is other or (
            len(self.rows) == len(other.rows) and bool(np.all(self.rows == other.rows))
        )

    # -- residual-variance support for the local fitting engine -------------

    @cached_property
    def cell_sigma2(self):
        """Per-row outcome variance from 3 nearest neighbors in the same cell.

        Within each (cutoff, treated) cell, sigma_i^2 = (J/(J+1)) * (y_i -
        mean of the J=3 nearest neighbors' y)^2, neighbors taken by score
        distance.  Rows in cells with fewer than 4 members get NaN; the
        fitting engine falls back to squared local residuals there.
        """
        out = np.full(len(self._y), np.nan)
        cells = np.stack([self._c, self._d], axis=1)
        _, inverse = np.unique(cells, axis=0, return_inverse=True)
        for cell_id in np.unique(inverse):
            members = np.flatnonzero(inverse == cell_id)
            if members.size < 4:
                continue
            out[members] = _nn_sigma2(self._x[members], self._y[members])
        out.setflags(write=False)
        return out


def _nn_sigma2(x, y, neighbors=3):
    """Nearest-neighbor variance estimates for one cell (vectorized)."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    m = xs.size
    # candidate neighbors of each sorted position: the `neighbors` rows on
    # either side; out-of-range candidates get infinite distance
    dists = np.full((m, 2 * neighbors), np.inf)
    vals = np.zeros((m, 2 * neighbors))
    col = 0
    for off in range(1, neighbors + 1):
        for sgn in (-1, 1):
            idx = np.arange(m) + sgn * off
            ok = (idx >= 0) & (idx < m)
            dists[ok, col] = np.abs(xs[ok] - xs[idx[ok]])
            vals[ok, col] = ys[idx[ok]]
            col += 1
    pick = np.argsort(dists, axis=1, kind="stable")[:, :neighbors]
    nbr_mean = np.take_along_axis(vals, pick, axis=1).mean(axis=1)
    s2 = (neighbors / (neighbors + 1.0)) * (ys - nbr_mean) ** 2
    out = np.empty(m)
    out[order] = s2
    return out


class CutoffPair(NamedTuple):
    """An ordered pair of cutoffs: extrapolate from ``low`` toward ``high``."""

    low: float
    high: float

    def validate(self, ds):
        if not self.low < self.high:
            raise DataError(f"cutoff pair must satisfy low < high, got {self}")
        for cut in (self.low, self.high):
            if cut not in ds.cutoffs:
                raise UnknownCutoff(cut)
        return self


# -- CSV interface -----------------------------------------------------------

CANONICAL_COLUMNS = ("y", "x", "c", "d")


def load_dataset(path, schema=None, design="sharp"):
    """Load a dataset from a headered UTF-8 CSV file.

    ``schema`` maps canonical names (y, x, c, d, z) to the file's column
    names; the z entry may list several columns.  When absent, columns named
    ``y``, ``x``, ``c``, optionally ``d`` and ``z1..zk`` are used.  Rows that
    fail to parse or violate observation invariants raise row-indexed errors
    (data rows counted from 1).
    """
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, header row required")
        header = list(reader.fieldnames)
        colmap = {}
        for name in ("y", "x", "c"):
            src = schema.get(name, name)
            if src not in header:
                raise MissingColumn(src)
            colmap[name] = src
        d_src = schema.get("d", "d" if "d" in header else None)
        if d_src is not None and d_src not in header:
            raise MissingColumn(d_src)
        z_src = schema.get("z")
        if z_src is None:
            z_src = [h for h in header if _is_auto_z(h)] or None
        elif isinstance(z_src, str):
            z_src = [s.strip() for s in z_src.split(",") if s.strip()]
        if z_src:
            for s in z_src:
                if s not in header:
                    raise MissingColumn(s)
        rows = list(reader)

    n = len(rows)
    if n == 0:
        raise DataError(f"{path}: no data rows")
    y = np.empty(n)
    x = np.empty(n)
    c = np.empty(n)
    d = np.empty(n) if d_src else None
    z = [] if z_src else None
    for i, row in enumerate(rows):
        rownum = i + 1
        for name, dest in (("y", y), ("x", x), ("c", c)):
            dest[i] = _parse_float(row[colmap[name]], rownum, colmap[name])
        if d is not None:
            d[i] = _parse_float(row[d_src], rownum, d_src)
        if z is not None:
            z.append(tuple(row[s] for s in z_src))

    try:
        return Dataset.from_arrays(y, x, c, d=d, z=z, design=design)
    except (ParseError, SharpComplianceViolation, MissingColumn):
        raise
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _is_auto_z(name):
    return len(name) > 1 and name[0] == "z" and name[1:].isdigit()


def _parse_float(raw, rownum, column):
    raw = (raw or "").strip()
    if not raw:
        raise ParseError(rownum, f"missing value in column {column!r}")
    try:
        return float(raw)
    except ValueError:
        raise ParseError(rownum, f"cannot parse {raw!r} in column {column!r}") from None


def save_dataset(ds, path):
    """Write a dataset back to canonical CSV; floats keep full precision."""
    z_cols = []
    if ds.has_covariates:
        z_cols = [f"z{j + 1}" for j in range(ds.z.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(CANONICAL_COLUMNS) + z_cols)
        for i in range(len(ds)):
            row = [repr(float(ds.y[i])), repr(float(ds.x[i])),
                   repr(float(ds.c[i])), str(int(ds.d[i]))]
            if z_cols:
                row += [str(v) for v in ds.z[i]]
            writer.writerow(row)


def subset(ds, cutoff=None, treated=None, window=None, assigned=None, z=None):
    """Functional alias for :meth:`Dataset.subset`."""
    return ds.subset(cutoff=cutoff, treated=treated, window=window,
                     assigned=assigned, z=z)


def pool_normalize(ds):
    """Recenter every score at its own cutoff and pool into one group.

    The returned dataset has scores ``x - c``, a single cutoff at zero and
    unchanged outcomes and treatment statuses.
    """
    x = ds.x - ds.c
    c = np.zeros(len(ds))
    return Dataset.from_arrays(ds.y, x, c, d=ds.d, z=ds.z, design=ds.design)
