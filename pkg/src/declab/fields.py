"""Amplitude fields on [0,1]^2 and evaluation of the extension operator.

A field is either atomic (point masses) or continuous (an amplitude sampled
by per-cell tensor Gauss-Legendre quadrature).  Extension values
E g(x) = int g(t,s) e(x . psi(t,s)) dt ds, with e(z) = exp(2 pi i z), are
computed by direct oscillatory summation; node counts scale with the phase
variation across a cell at the largest frequency requested, which keeps the
quadrature converged for every sample the norm estimators draw.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .geometry import SurfaceEvaluator
from .grid import CapPartition, DyadicSquare, square_at

TWO_PI_I = 2j * np.pi

_leg_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _leg_cache:
        _leg_cache[n] = leggauss(n)
    return _leg_cache[n]


def nodes_for_cycles(cycles: float, factor: int = 1) -> int:
    """Gauss-Legendre node count resolving the given number of phase cycles."""
    return int(np.ceil(3.2 * max(cycles, 0.0)) + 16) * factor


def _ones(t):
    return np.ones_like(np.asarray(t, dtype=float), dtype=complex)


@dataclass(frozen=True)
class AmplitudeField:
    """Amplitude input g for the extension operator.

    mode "atomic": point masses (points, amplitudes).
    mode "continuous": cells (disjoint dyadic squares at one level) carrying
    amplitude coeff[k] * g1(t) * g2(s) * g_extra(t, s); factors default to 1.
    Fields are immutable; transforms return new instances.
    """

    mode: str
    points: np.ndarray | None = None
    amplitudes: np.ndarray | None = None
    cells: tuple[DyadicSquare, ...] = ()
    coeffs: np.ndarray | None = None
    g1: Callable | None = None
    g2: Callable | None = None
    g_extra: Callable | None = None
    node_factor: int = 1

    def __post_init__(self):
        if self.mode == "continuous" and self.cells:
            if len({c.level for c in self.cells}) != 1:
                raise ValueError("quadrature cells must share one level")

    # -- constructors -------------------------------------------------------

    @classmethod
    def atomic(cls, points, amplitudes) -> "AmplitudeField":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        amps = np.asarray(amplitudes, dtype=complex).ravel()
        if pts.shape[1] != 2 or pts.shape[0] != amps.shape[0]:
            raise ValueError("points must be (n,2) with matching amplitudes")
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValueError("atomic points must lie in [0,1]^2")
        return cls(mode="atomic", points=pts, amplitudes=amps)

    @classmethod
    def constant(cls, level: int, value: complex = 1.0,
                 support: Sequence[DyadicSquare] | None = None) -> "AmplitudeField":
        cells = tuple(support) if support is not None else tuple(CapPartition.full(level))
        coeffs = np.full(len(cells), complex(value))
        return cls(mode="continuous", cells=cells, coeffs=coeffs)

    @classmethod
    def random_phase(cls, level: int, seed: int,
                     support: Sequence[DyadicSquare] | None = None) -> "AmplitudeField":
        cells = tuple(support) if support is not None else tuple(CapPartition.full(level))
        rng = np.random.default_rng(seed)
        coeffs = np.exp(TWO_PI_I * rng.random(len(cells)))
        return cls(mode="continuous", cells=cells, coeffs=coeffs)

    @classmethod
    def separable(cls, level: int, g1: Callable | None, g2: Callable | None,
                  support: Sequence[DyadicSquare] | None = None) -> "AmplitudeField":
        cells = tuple(support) if support is not None else tuple(CapPartition.full(level))
        return cls(mode="continuous", cells=cells,
                   coeffs=np.ones(len(cells), dtype=complex), g1=g1, g2=g2)

    @classmethod
    def from_function(cls, level: int, g: Callable,
                      support: Sequence[DyadicSquare] | None = None) -> "AmplitudeField":
        cells = tuple(support) if support is not None else tuple(CapPartition.full(level))
        return cls(mode="continuous", cells=cells,
                   coeffs=np.ones(len(cells), dtype=complex), g_extra=g)

    # -- structure ----------------------------------------------------------

    @property
    def separable_profile(self) -> bool:
        return self.mode == "continuous" and self.g_extra is None

    @property
    def cell_level(self) -> int:
        if not self.cells:
            raise ValueError("field has no cells")
        return self.cells[0].level

    def support_squares(self, level: int) -> tuple[DyadicSquare, ...]:
        """Support at the requested level (atomic: occupied caps)."""
        if self.mode == "atomic":
            seen = {}
            for t, s in self.points:
                sq = square_at(level, t, s)
                seen[(sq.i, sq.j)] = sq
            return tuple(seen[k] for k in sorted(seen))
        out = {}
        for cell in self.cells:
            if level <= cell.level:
                sq = DyadicSquare(level, cell.i >> (cell.level - level),
                                  cell.j >> (cell.level - level))
                out[(sq.i, sq.j)] = sq
            else:
                for sub in cell.subdivide(level - cell.level):
                    out[(sub.i, sub.j)] = sub
        return tuple(out[k] for k in sorted(out))

    def amplitude_on_cell(self, k: int, t, s):
        v = np.full(np.broadcast_shapes(np.shape(t), np.shape(s)), self.coeffs[k])
        if self.g1 is not None:
            v = v * self.g1(np.asarray(t, dtype=float))
        if self.g2 is not None:
            v = v * self.g2(np.asarray(s, dtype=float))
        if self.g_extra is not None:
            v = v * self.g_extra(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        return v

    # -- transforms ---------------------------------------------------------

    def restrict(self, square: DyadicSquare) -> "AmplitudeField":
        """Restriction to a dyadic square (half-open cap convention for
        atomic points; whole-cell selection for continuous fields).  An
        empty restriction is a valid zero field."""
        if self.mode == "atomic":
            mask = square.contains(self.points[:, 0], self.points[:, 1])
            return AmplitudeField(mode="atomic", points=self.points[mask],
                                  amplitudes=self.amplitudes[mask])
        if self.cells and square.level > self.cell_level:
            raise ValueError("cannot restrict below the quadrature cell level")
        keep = [k for k, c in enumerate(self.cells) if square.contains_square(c)]
        return replace(self, cells=tuple(self.cells[k] for k in keep),
                       coeffs=self.coeffs[keep])

    def refine(self, factor: int) -> "AmplitudeField":
        """Refined tensor quadrature (continuous only)."""
        if self.mode != "continuous":
            raise ValueError("refine applies to continuous fields only")
        if factor < 1:
            raise ValueError("factor must be >= 1")
        return replace(self, node_factor=self.node_factor * int(factor))

    def scaled(self, factor: complex) -> "AmplitudeField":
        if self.mode == "atomic":
            return AmplitudeField(mode="atomic", points=self.points,
                                  amplitudes=self.amplitudes * factor)
        return replace(self, coeffs=self.coeffs * factor)

    def conjugated(self) -> "AmplitudeField":
        if self.mode == "atomic":
            return AmplitudeField(mode="atomic", points=self.points,
                                  amplitudes=np.conj(self.amplitudes))
        raise ValueError("conjugation helper implemented for atomic mode")

    def modulated(self, surface: SurfaceEvaluator, y) -> "AmplitudeField":
        """Multiply the amplitude by e(y . psi(t,s))."""
        y = np.asarray(y, dtype=float)
        if self.mode == "atomic":
            phase = self.points_phase(surface) @ y
            return AmplitudeField(mode="atomic", points=self.points,
                                  amplitudes=self.amplitudes * np.exp(TWO_PI_I * phase))

        def extra(t, s, _old=self.g_extra):
            v = np.exp(TWO_PI_I * (surface.value(t, s) @ y))
            return v if _old is None else v * _old(t, s)

        return replace(self, g_extra=extra)

    def remapped(self, offset: tuple[float, float], scale: float,
                 amplitude_factor: complex) -> "AmplitudeField":
        """Continuous-field cap rescaling: cells must be dyadic inside the
        dyadic square [a, a+scale] x [b, b+scale]."""
        lev = int(round(-np.log2(scale)))
        if abs(scale - 2.0 ** -lev) > 1e-12:
            raise ValueError("continuous rescaling needs a dyadic side")
        a, b = offset
        region = square_at(lev, min(a, 1 - 1e-12), min(b, 1 - 1e-12))
        if abs(region.corner[0] - a) > 1e-12 or abs(region.corner[1] - b) > 1e-12:
            raise ValueError("continuous rescaling needs a dyadic-aligned square")
        new_cells = []
        for c in self.cells:
            shift = c.level - lev
            new_cells.append(DyadicSquare(shift, c.i - (region.i << shift),
                                          c.j - (region.j << shift)))

        g1 = (lambda u, _g=self.g1: _g(scale * np.asarray(u) + a)) if self.g1 else None
        g2 = (lambda u, _g=self.g2: _g(scale * np.asarray(u) + b)) if self.g2 else None
        g_extra = None
        if self.g_extra is not None:
            g_extra = lambda u, v, _g=self.g_extra: _g(scale * np.asarray(u) + a,
                                                       scale * np.asarray(v) + b)
        return AmplitudeField(mode="continuous", cells=tuple(new_cells),
                              coeffs=self.coeffs * amplitude_factor,
                              g1=g1, g2=g2, g_extra=g_extra,
                              node_factor=self.node_factor)

    def points_phase(self, surface: SurfaceEvaluator) -> np.ndarray:
        return surface.value(self.points[:, 0], self.points[:, 1])


def cap_restrict(field: AmplitudeField, square: DyadicSquare) -> AmplitudeField:
    return field.restrict(square)


def quadrature_refine(field: AmplitudeField, factor: int) -> AmplitudeField:
    return field.refine(factor)


# ---------------------------------------------------------------------------
# extension evaluation


class ExtensionEvaluator:
    """Evaluates per-cell extension values and their sum on sample batches.

    x_max bounds the sup-norm of the frequency points that will be queried;
    quadrature node counts grow linearly with it so that the oscillatory
    integrals stay resolved.
    """

    def __init__(self, surface: SurfaceEvaluator, amp_field: AmplitudeField,
                 x_max: float):
        self.surface = surface
        self.field = amp_field
        self.x_max = float(x_max)
        self._mode = None
        if amp_field.mode == "atomic":
            self._mode = "atomic"
            self._phase = amp_field.points_phase(surface)      # (n, 4)
            self._amps = amp_field.amplitudes
            self.cells = None
            return
        self.cells = amp_field.cells
        split = surface.phase_split()
        if split is not None and amp_field.separable_profile:
            self._mode = "separable"
            self._build_separable(split)
        else:
            self._mode = "tensor"
            self._build_tensor()

    # -- cell machinery -----------------------------------------------------

    def _phase_bound(self) -> float:
        surf = self.surface
        if hasattr(surf, "phase_derivative_bound"):
            return surf.phase_derivative_bound()
        # generic bound from sampled first derivatives
        tt = np.linspace(0, 1, 33)
        g = np.meshgrid(tt, tt, indexing="ij")
        dmax = 0.0
        for w in ("t", "s"):
            d = surf.partial(g[0], g[1], w)
            dmax = max(dmax, float(np.abs(d).sum(axis=-1).max()))
        return dmax

    def _build_separable(self, split):
        part_t, part_s = split
        f = self.field
        side = f.cells[0].side
        bound = self._phase_bound()
        n1 = nodes_for_cycles(self.x_max * bound * side, f.node_factor)
        xg, wg = _gauss(n1)
        ti = sorted({c.i for c in f.cells})
        sj = sorted({c.j for c in f.cells})
        self._ti_index = {i: k for k, i in enumerate(ti)}
        self._sj_index = {j: k for k, j in enumerate(sj)}
        self._t_nodes = np.add.outer(np.array(ti) * side, side / 2 * (xg + 1.0))
        self._s_nodes = np.add.outer(np.array(sj) * side, side / 2 * (xg + 1.0))
        self._t_w = side / 2 * wg
        g1 = f.g1 if f.g1 is not None else _ones
        g2 = f.g2 if f.g2 is not None else _ones
        self._t_amp = np.asarray(g1(self._t_nodes), dtype=complex) * self._t_w
        self._s_amp = np.asarray(g2(self._s_nodes), dtype=complex) * self._t_w
        self._part_t, self._part_s = part_t, part_s
        self._cell_rows = np.array([self._ti_index[c.i] for c in f.cells])
        self._cell_cols = np.array([self._sj_index[c.j] for c in f.cells])

    def _build_tensor(self):
        f = self.field
        bound = self._phase_bound()
        self._tensor_nodes = []
        for cell in f.cells:
            side = cell.side
            n1 = nodes_for_cycles(self.x_max * bound * side, f.node_factor)
            xg, wg = _gauss(n1)
            t0, _, s0, _ = cell.bounds
            tn = t0 + side / 2 * (xg + 1.0)
            sn = s0 + side / 2 * (xg + 1.0)
            T, S = np.meshgrid(tn, sn, indexing="ij")
            W = np.outer(side / 2 * wg, side / 2 * wg)
            self._tensor_nodes.append((T.ravel(), S.ravel(), W.ravel()))

    # -- evaluation ---------------------------------------------------------

    def _factors(self, nodes, amp, part, X):
        """Per-interval 1-D factors: (n_intervals, B)."""
        out = np.empty((nodes.shape[0], X.shape[0]), dtype=complex)
        for k in range(nodes.shape[0]):
            ph = part(nodes[k], X)
            out[k] = amp[k] @ np.exp(TWO_PI_I * ph)
        return out

    def cell_values(self, X) -> np.ndarray:
        """Extension of each cell restriction at the sample batch X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite evaluation point")
        if self._mode == "atomic":
            vals = self._amps[:, None] * np.exp(TWO_PI_I * (self._phase @ X.T))
            return vals
        if self._mode == "separable":
            ft = self._factors(self._t_nodes, self._t_amp, self._part_t, X)
            fs = self._factors(self._s_nodes, self._s_amp, self._part_s, X)
            return self.field.coeffs[:, None] * ft[self._cell_rows] * fs[self._cell_cols]
        out = np.empty((len(self.field.cells), X.shape[0]), dtype=complex)
        for k, (tn, sn, wn) in enumerate(self._tensor_nodes):
            amp = self.field.amplitude_on_cell(k, tn, sn) * wn
            ph = self.surface.value(tn, sn) @ X.T
            out[k] = amp @ np.exp(TWO_PI_I * ph)
        return out

    def total(self, X) -> np.ndarray:
        """E g(x) on the batch: sum of the cell values."""
        return self.cell_values(X).sum(axis=0)

    @property
    def n_cells(self) -> int:
        if self._mode == "atomic":
            return self._amps.shape[0]
        return len(self.field.cells)


def extension_evaluator(surface: SurfaceEvaluator, amp_field: AmplitudeField,
                        x_max: float) -> ExtensionEvaluator:
    return ExtensionEvaluator(surface, amp_field, x_max)


def extension_value(surface: SurfaceEvaluator, amp_field: AmplitudeField, x) -> complex | np.ndarray:
    """E g at one or several frequency points (convenience wrapper)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if not np.all(np.isfinite(xb)):
        raise ValueError("non-finite evaluation point")
    ev = ExtensionEvaluator(surface, amp_field, float(np.abs(xb).max()))
    out = ev.total(xb)
    return complex(out[0]) if single else out


# ---------------------------------------------------------------------------
# 1-D interval extensions (shared by the planar-curve and bilinear-curve
# reference pipelines)


class LineEvaluator:
    """Extension of 1-D amplitudes over a family of intervals.

    phase(t_nodes, X) must return the (n_nodes, B) phase table; the
    derivative bound controls the oscillatory node count.
    """

    def __init__(self, intervals, amplitude: Callable | None, phase: Callable,
                 x_max: float, phase_derivative_bound: float,
                 node_factor: int = 1):
        self.intervals = [(float(a), float(b)) for a, b in intervals]
        self._phase = phase
        sides = [b - a for a, b in self.intervals]
        n1 = nodes_for_cycles(x_max * phase_derivative_bound * max(sides), node_factor)
        xg, wg = _gauss(n1)
        nodes, amps = [], []
        for (a, b) in self.intervals:
            tn = a + (b - a) / 2 * (xg + 1.0)
            wn = (b - a) / 2 * wg
            av = np.asarray(amplitude(tn), dtype=complex) if amplitude else np.ones(n1, complex)
            nodes.append(tn)
            amps.append(av * wn)
        self._nodes = np.array(nodes)
        self._amps = np.array(amps)

    def interval_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((len(self.intervals), X.shape[0]), dtype=complex)
        for k in range(len(self.intervals)):
            ph = self._phase(self._nodes[k], X)
            out[k] = self._amps[k] @ np.exp(TWO_PI_I * ph)
        return out

    def total(self, X) -> np.ndarray:
        return self.interval_values(X).sum(axis=0)
