"""Uniform grids and sampled functions (zero outside the grid)."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Lattice:
    """Nodes ``origin + h * index`` for ``0 <= index < dims``.

    Each node owns the cell of side ``h`` centred on it, so the grid box is
    ``[origin - h/2, origin + (dims - 1/2) h]``.
    """

    origin: tuple
    h: float
    dims: tuple

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if len(self.origin) != len(self.dims):
            raise ValueError("origin and dims disagree in dimension")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def axes(self):
        return [o + self.h * np.arange(d) for o, d in zip(self.origin, self.dims)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape (size, ndim), C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def indices(self) -> np.ndarray:
        mesh = np.meshgrid(*[np.arange(d) for d in self.dims], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def box(self):
        lo = np.asarray(self.origin) - self.h / 2
        hi = lo + self.h * np.asarray(self.dims)
        return lo, hi

    @classmethod
    def covering(cls, lo, hi, h: float, margin: int = 2, offset=None) -> "Lattice":
        """Smallest lattice of spacing h whose nodes cover [lo, hi] plus ``margin`` cells.

        ``offset`` (fractions of h per axis) shifts the node positions relative
        to the absolute lattice h * Z^N; it is how grid-offset ensembles are built.
        """
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.atleast_1d(np.asarray(hi, float))
        off = np.zeros_like(lo) if offset is None else np.atleast_1d(np.asarray(offset, float))
        start = np.floor((lo - off * h) / h) - margin
        stop = np.ceil((hi - off * h) / h) + margin
        dims = (stop - start + 1).astype(int)
        return cls(tuple((start + off) * h), h, tuple(dims))


@dataclass
class GridFunction:
    """Nonnegative samples on a lattice, implicitly zero outside it."""

    lattice: Lattice
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.lattice.dims)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    @classmethod
    def sample(cls, lattice: Lattice, f) -> "GridFunction":
        return cls(lattice, np.asarray(f(lattice.points()), float).reshape(lattice.dims))

    @property
    def h(self) -> float:
        return self.lattice.h

    @property
    def ndim(self) -> int:
        return self.lattice.ndim

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.lattice, values)

    def margin_ok(self) -> bool:
        """True when the outermost layer of nodes is zero."""
        v = self.values
        for ax in range(v.ndim):
            if np.any(np.take(v, 0, axis=ax)) or np.any(np.take(v, -1, axis=ax)):
                return False
        return True

    def lp_norm(self, p: float) -> float:
        v = np.abs(self.values)
        if np.isinf(p):
            return float(v.max(initial=0.0))
        return float((np.sum(v**p) * self.h**self.ndim) ** (1.0 / p))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.h**self.ndim)

    # -- persistence --------------------------------------------------------
    def header(self) -> dict:
        return {"origin": list(self.lattice.origin), "spacing": self.h, "dims": list(self.lattice.dims)}

    def to_csv(self, path) -> None:
        """``# {json header}`` line followed by the values in C order, one per line."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write("# " + json.dumps(self.header()) + "\n")
            w = csv.writer(fh)
            for v in self.values.ravel():
                w.writerow([repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        text = Path(path).read_text()
        first, _, rest = text.partition("\n")
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing grid header line")
        hdr = json.loads(first[1:])
        vals = np.loadtxt(io.StringIO(rest), delimiter=",", ndmin=1)
        lat = Lattice(tuple(hdr["origin"]), float(hdr["spacing"]), tuple(hdr["dims"]))
        if vals.size != lat.size:
            raise ValueError(f"{path}: expected {lat.size} values, found {vals.size}")
        return cls(lat, vals.reshape(lat.dims))

    def to_npy(self, path) -> None:
        """Flat binary: values as .npy plus a JSON header next to it."""
        path = Path(path)
        np.save(path, self.values)
        path.with_suffix(".json").write_text(json.dumps(self.header(), indent=2))

    @classmethod
    def from_npy(cls, path) -> "GridFunction":
        path = Path(path)
        hdr = json.loads(path.with_suffix(".json").read_text())
        lat = Lattice(tuple(hdr["origin"]), float(hdr["spacing"]), tuple(hdr["dims"]))
        return cls(lat, np.load(path))

    @classmethod
    def load(cls, path) -> "GridFunction":
        return cls.from_npy(path) if str(path).endswith(".npy") else cls.from_csv(path)
