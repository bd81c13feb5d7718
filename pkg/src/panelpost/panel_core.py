"""Three-dimensional panel data and the stacked sparse design system.

Rows of the design are ordered lexicographically in (i, j, t) so that every
(i, j) cluster occupies a contiguous block of T rows. Columns follow

    [x_1..x_k | lambda_1..lambda_T | alpha_1..alpha_N | alpha_11..alpha_NT |
     gamma_1..gamma_M | gamma_11..gamma_MT]

with the interaction blocks ordered unit-major, period-minor.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .exceptions import PanelDataError

__all__ = [
    "PanelObservation",
    "PanelDataset",
    "Effect",
    "DesignLayout",
    "DesignSystem",
    "build_design",
    "column_index",
    "rate_adjusted_gram",
    "read_panel_csv",
    "write_panel_csv",
]


@dataclass(frozen=True)
class PanelObservation:
    i: int
    j: int
    t: int
    y: float
    x: tuple[float, ...]


class PanelDataset:
    """Balanced panel stored as dense cubes ``y[i, j, t]`` and ``x[i, j, t, :]``.

    Indices exposed to users are 1-based; the cubes are 0-based.
    """

    def __init__(self, y: np.ndarray, x: np.ndarray):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            x = x[..., None]
        if y.ndim != 3 or x.ndim != 4 or x.shape[:3] != y.shape:
            raise PanelDataError(
                f"expected y of shape (N, M, T) and x of shape (N, M, T, k); got {y.shape} and {x.shape}")
        N, M, T = y.shape
        k = x.shape[3]
        if N < 2 or M < 2 or T < 1 or k < 1:
            raise PanelDataError(f"need N >= 2, M >= 2, T >= 1, k >= 1; got N={N}, M={M}, T={T}, k={k}")
        bad = ~np.isfinite(y) | ~np.all(np.isfinite(x), axis=3)
        if bad.any():
            i, j, t = (int(v) + 1 for v in np.argwhere(bad)[0])
            raise PanelDataError(f"invalid datum at (i,j,t)=({i},{j},{t}): non-finite value")
        self.y = y
        self.x = x

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def M(self) -> int:
        return self.y.shape[1]

    @property
    def T(self) -> int:
        return self.y.shape[2]

    @property
    def k(self) -> int:
        return self.x.shape[3]

    @property
    def n_obs(self) -> int:
        return self.y.size

    @classmethod
    def from_observations(cls, observations: Iterable[PanelObservation], N: int | None = None,
                          M: int | None = None, T: int | None = None) -> "PanelDataset":
        """Assemble a dataset from long-format records, rejecting duplicates and holes.

        Dimensions default to the largest index seen for each axis.
        """
        obs = list(observations)
        if not obs:
            raise PanelDataError("no observations")
        k = len(obs[0].x)
        N = N if N is not None else max(o.i for o in obs)
        M = M if M is not None else max(o.j for o in obs)
        T = T if T is not None else max(o.t for o in obs)
        y = np.full((N, M, T), np.nan)
        x = np.full((N, M, T, k), np.nan)
        seen = np.zeros((N, M, T), dtype=bool)
        for o in obs:
            if not (1 <= o.i <= N and 1 <= o.j <= M and 1 <= o.t <= T):
                raise PanelDataError(f"index (i,j,t)=({o.i},{o.j},{o.t}) outside 1..({N},{M},{T})")
            if len(o.x) != k:
                raise PanelDataError(f"observation ({o.i},{o.j},{o.t}) has {len(o.x)} regressors, expected {k}")
            if seen[o.i - 1, o.j - 1, o.t - 1]:
                raise PanelDataError(f"duplicate cell (i,j,t)=({o.i},{o.j},{o.t})")
            seen[o.i - 1, o.j - 1, o.t - 1] = True
            y[o.i - 1, o.j - 1, o.t - 1] = o.y
            x[o.i - 1, o.j - 1, o.t - 1] = o.x
        if not seen.all():
            i, j, t = (int(v) + 1 for v in np.argwhere(~seen)[0])
            raise PanelDataError(f"missing cell (i,j,t)=({i},{j},{t})")
        return cls(y, x)

    @property
    def observations(self) -> list[PanelObservation]:
        out = []
        for i, j, t in np.ndindex(self.y.shape):
            out.append(PanelObservation(i + 1, j + 1, t + 1, float(self.y[i, j, t]),
                                        tuple(float(v) for v in self.x[i, j, t])))
        return out

    def long_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return 0-based ``(i, j, t)`` index vectors, ``y`` and ``x`` in (i, j, t) order."""
        N, M, T = self.y.shape
        ii, jj, tt = np.meshgrid(np.arange(N), np.arange(M), np.arange(T), indexing="ij")
        return ii.ravel(), jj.ravel(), tt.ravel(), self.y.ravel(), self.x.reshape(-1, self.k)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PanelDataset):
            return NotImplemented
        return np.array_equal(self.y, other.y) and np.array_equal(self.x, other.x)

    def __repr__(self) -> str:
        return f"PanelDataset(N={self.N}, M={self.M}, T={self.T}, k={self.k})"


class Effect(NamedTuple):
    """A coefficient descriptor; ``index`` holds 1-based unit and/or period numbers."""

    kind: str
    index: tuple[int, ...]


# block name -> (number of index components)
_KINDS = {"x": 1, "lambda": 1, "alpha": 1, "alpha_t": 2, "gamma": 1, "gamma_t": 2}


@dataclass(frozen=True)
class DesignLayout:
    N: int
    M: int
    T: int
    k: int

    @property
    def k0(self) -> int:
        return self.k + self.T

    @property
    def N0(self) -> int:
        return self.N + self.N * self.T

    @property
    def M0(self) -> int:
        return self.M + self.M * self.T

    @property
    def p(self) -> int:
        return self.k0 + self.N0 + self.M0

    @property
    def offsets(self) -> dict[str, int]:
        k, T, N, M = self.k, self.T, self.N, self.M
        return {
            "x": 0,
            "lambda": k,
            "alpha": k + T,
            "alpha_t": k + T + N,
            "gamma": k + T + N + N * T,
            "gamma_t": k + T + N + N * T + M,
        }

    def block_sizes(self) -> dict[str, int]:
        k, T, N, M = self.k, self.T, self.N, self.M
        return {"x": k, "lambda": T, "alpha": N, "alpha_t": N * T, "gamma": M, "gamma_t": M * T}

    def column_index(self, effect: Effect) -> int:
        kind, idx = effect
        if kind not in _KINDS or len(idx) != _KINDS[kind]:
            raise IndexError(f"unknown effect descriptor {effect!r}")
        bounds = {"x": (self.k,), "lambda": (self.T,), "alpha": (self.N,), "alpha_t": (self.N, self.T),
                  "gamma": (self.M,), "gamma_t": (self.M, self.T)}[kind]
        for v, hi in zip(idx, bounds):
            if not 1 <= v <= hi:
                raise IndexError(f"effect {effect!r} out of bounds (limits {bounds})")
        off = self.offsets[kind]
        if len(idx) == 1:
            return off + idx[0] - 1
        return off + (idx[0] - 1) * self.T + (idx[1] - 1)

    def effect_at(self, col: int) -> Effect:
        if not 0 <= col < self.p:
            raise IndexError(f"column {col} outside 0..{self.p - 1}")
        sizes = self.block_sizes()
        for kind, off in self.offsets.items():
            if col < off + sizes[kind]:
                r = col - off
                if _KINDS[kind] == 1:
                    return Effect(kind, (r + 1,))
                return Effect(kind, (r // self.T + 1, r % self.T + 1))
        raise AssertionError("unreachable")

    def name(self, col: int) -> str:
        kind, idx = self.effect_at(col)
        label = "beta" if kind == "x" else kind
        return label + "_" + "_".join(str(v) for v in idx)

    def as_dict(self) -> dict:
        return {"N": self.N, "M": self.M, "T": self.T, "k": self.k,
                "k0": self.k0, "N0": self.N0, "M0": self.M0, "p": self.p}


def column_index(layout: DesignLayout, effect: Effect | tuple) -> int:
    return layout.column_index(Effect(*effect))


@dataclass(frozen=True, eq=False)
class DesignSystem:
    """Stacked system ``Y = Z eta + error``; ``Z`` is CSC, rows in (i, j, t) order."""

    Y: np.ndarray
    Z: sp.csc_matrix
    S_diag: np.ndarray
    cluster_of_row: np.ndarray
    layout: DesignLayout

    @property
    def NM(self) -> int:
        return self.layout.N * self.layout.M

    @property
    def n_clusters(self) -> int:
        return self.NM

    @property
    def n_obs(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.layout.p

    def penalty_weights(self) -> np.ndarray:
        """Block weights 1, 1/sqrt(N), 1/sqrt(M); equal to S_diag / sqrt(NM)."""
        return self.S_diag / np.sqrt(self.NM)


def build_design(data: PanelDataset) -> DesignSystem:
    layout = DesignLayout(data.N, data.M, data.T, data.k)
    N, M, T, k = data.N, data.M, data.T, data.k
    off = layout.offsets
    ii, jj, tt, y, x = data.long_arrays()
    n = y.shape[0]
    rows = np.arange(n)

    # x block is dense; the five indicator columns per row are exact ones
    x_rows = np.repeat(rows, k)
    x_cols = np.tile(np.arange(k), n)
    x_vals = x.ravel()
    dummy_cols = np.stack([
        off["lambda"] + tt,
        off["alpha"] + ii,
        off["alpha_t"] + ii * T + tt,
        off["gamma"] + jj,
        off["gamma_t"] + jj * T + tt,
    ], axis=1).ravel()
    d_rows = np.repeat(rows, 5)
    Z = sp.csc_matrix(
        (np.concatenate([x_vals, np.ones(d_rows.size)]),
         (np.concatenate([x_rows, d_rows]), np.concatenate([x_cols, dummy_cols]))),
        shape=(n, layout.p),
    )
    Z.sort_indices()
    S_diag = np.concatenate([
        np.full(layout.k0, np.sqrt(N * M)),
        np.full(layout.N0, np.sqrt(M)),
        np.full(layout.M0, np.sqrt(N)),
    ])
    return DesignSystem(Y=y.copy(), Z=Z, S_diag=S_diag, cluster_of_row=ii * M + jj, layout=layout)


def rate_adjusted_gram(sys: DesignSystem, max_p: int = 5000) -> np.ndarray:
    """Dense ``S^-1 Z'Z S^-1``; refuses when p exceeds ``max_p``."""
    if sys.p > max_p:
        raise MemoryError(f"p={sys.p} exceeds the dense diagnostic limit max_p={max_p}")
    G = (sys.Z.T @ sys.Z).toarray()
    s = 1.0 / sys.S_diag
    psi = G * s[:, None] * s[None, :]
    return 0.5 * (psi + psi.T)


def read_panel_csv(source: str | Path | io.TextIOBase) -> PanelDataset:
    """Parse ``i,j,t,y,x1,...,xk`` CSV with 1-based indices."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_panel_csv(fh)
    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PanelDataError("empty CSV input") from None
    if header[:4] != ["i", "j", "t", "y"] or len(header) < 5:
        raise PanelDataError(f"line 1: header must be i,j,t,y,x1,...,xk; got {','.join(header)}")
    k = len(header) - 4
    expected = [f"x{m}" for m in range(1, k + 1)]
    if header[4:] != expected:
        raise PanelDataError(f"line 1: regressor columns must be named {','.join(expected)}")
    obs = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PanelDataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            i, j, t = (int(row[c]) for c in range(3))
        except ValueError:
            raise PanelDataError(f"line {lineno}: indices i,j,t must be integers") from None
        vals = []
        for c in range(3, len(row)):
            try:
                v = float(row[c])
            except ValueError:
                raise PanelDataError(f"line {lineno}, column {header[c]}: invalid datum {row[c]!r}") from None
            if not np.isfinite(v):
                raise PanelDataError(f"line {lineno}, column {header[c]}: invalid datum {row[c]!r}")
            vals.append(v)
        if min(i, j, t) < 1:
            raise PanelDataError(f"line {lineno}: indices are 1-based; got ({i},{j},{t})")
        obs.append(PanelObservation(i, j, t, vals[0], tuple(vals[1:])))
    return PanelDataset.from_observations(obs)


def write_panel_csv(data: PanelDataset, target: str | Path | io.TextIOBase) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            write_panel_csv(data, fh)
        return
    w = csv.writer(target, lineterminator="\n")
    w.writerow(["i", "j", "t", "y"] + [f"x{m}" for m in range(1, data.k + 1)])
    for o in data.observations:
        w.writerow([o.i, o.j, o.t, repr(o.y)] + [repr(v) for v in o.x])
