"""Eigenlevel sweeps, clock transitions, transition tables and ODMR spectra.

Fields are swept along z (the c-axis).  Levels are followed adiabatically by
eigenvector overlap and named after their dominant product-basis ket at the
high-field end of the sweep, so labels survive the anti-crossings.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.signal import find_peaks

from .hamiltonian import SpinModel, format_ket, parse_ket

LABEL_FIELD = 50.0  # mT
OVERLAP_MIN = 0.5
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
Z_AXIS = (0.0, 0.0, 1.0)


class TrackingError(RuntimeError):
    """Adiabatic tracking could not find unambiguous overlaps."""

    def __init__(self, b_lo: float, b_hi: float, overlap: float):
        super().__init__(f"level tracking failed between {b_lo:.6g} and {b_hi:.6g} mT "
                         f"(best overlap {overlap:.3f} < {OVERLAP_MIN})")
        self.interval = (b_lo, b_hi)
        self.overlap = overlap


def diagonalize(model: SpinModel, bz: float) -> tuple[np.ndarray, np.ndarray]:
    """Sorted eigenvalues (MHz) and eigenvectors (columns) at field ``bz`` along z."""
    return np.linalg.eigh(model.static_hamiltonian(bz))


def _clusters(vals: np.ndarray, tol: float) -> list[np.ndarray]:
    groups, start = [], 0
    for k in range(1, len(vals) + 1):
        if k == len(vals) or vals[k] - vals[k - 1] > tol:
            groups.append(np.arange(start, k))
            start = k
    return groups


def _align_degenerate(vals, vecs, reference, tol):
    """Rotate each degenerate eigenspace onto its best match in ``reference``.

    ``reference`` holds candidate columns; for a cluster of size k the k
    columns with the largest projection into the cluster are used as targets
    (orthogonal Procrustes).
    """
    vecs = vecs.copy()
    for idx in _clusters(vals, tol):
        if len(idx) < 2:
            continue
        v = vecs[:, idx]
        weight = np.sum(np.abs(v.conj().T @ reference) ** 2, axis=0)
        targets = reference[:, np.sort(np.argsort(weight)[::-1][:len(idx)])]
        u, _, wh = np.linalg.svd(v.conj().T @ targets)
        vecs[:, idx] = v @ (u @ wh)
    return vecs


def _degeneracy_tol(vals: np.ndarray) -> float:
    return 1e-9 * max(1.0, float(np.max(np.abs(vals))))


def _match(prev_vecs, vals, vecs):
    """Return (aligned vectors, permutation tracked->sorted, min overlap)."""
    vecs = _align_degenerate(vals, vecs, prev_vecs, _degeneracy_tol(vals))
    overlap = np.abs(prev_vecs.conj().T @ vecs) ** 2
    rows, cols = linear_sum_assignment(-overlap)
    perm = np.empty(len(vals), dtype=int)
    perm[rows] = cols
    return vecs, perm, float(overlap[rows, cols].min())


def dominant_labels(space, vecs: np.ndarray) -> tuple[list[int], list[str]]:
    """Unique dominant basis ket per eigenvector (maximum-weight assignment)."""
    weight = np.abs(vecs) ** 2
    basis_idx, level_idx = linear_sum_assignment(-weight)
    dom = np.empty(vecs.shape[1], dtype=int)
    dom[level_idx] = basis_idx
    basis = space.basis()
    return dom.tolist(), [format_ket(space, basis[d]) for d in dom]


@dataclass
class LevelDiagram:
    """Tracked eigenlevels along a z-field sweep.

    ``energies[i, n]`` is level ``n`` at ``b_values[i]``; ``order[i, n]`` the
    index of that level in the sorted eigenvalue list at the same field.
    """

    b_values: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    labels: list[str]
    order: np.ndarray
    quantum_numbers: list[tuple[float, ...]] = field(default_factory=list)
    min_overlap: float = 1.0

    @property
    def dim(self) -> int:
        return self.energies.shape[1]

    def level(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            return int(label)
        key = _normalize_label(label)
        for n, lab in enumerate(self.labels):
            if _normalize_label(lab) == key:
                return n
        raise KeyError(f"no tracked level labelled {label!r}")

    def gap(self, pair) -> np.ndarray:
        i, j = (self.level(p) for p in pair)
        return self.energies[:, j] - self.energies[:, i]


def _normalize_label(label: str) -> str:
    return label.replace("−", "-").replace(" ", "").replace(">", "⟩")


def _track_interval(model, b_from, b_to, prev_vecs, depth, max_depth):
    """Diagonalize at ``b_to`` and match against the tracked vectors at ``b_from``."""
    vals, vecs = diagonalize(model, b_to)
    aligned, perm, worst = _match(prev_vecs, vals, vecs)
    if worst > OVERLAP_MIN:
        return vals, aligned, perm, worst
    if depth >= max_depth:
        lo, hi = sorted((b_from, b_to))
        raise TrackingError(lo, hi, worst)
    mid = 0.5 * (b_from + b_to)
    _, vecs_m, perm_m, w1 = _track_interval(model, b_from, mid, prev_vecs, depth + 1, max_depth)
    vals, aligned, perm, w2 = _track_interval(model, mid, b_to, vecs_m[:, perm_m],
                                              depth + 1, max_depth)
    return vals, aligned, perm, min(w1, w2)


def sweep_levels(model: SpinModel, b_axis: Sequence[float], max_refine: int = 16) -> LevelDiagram:
    """Diagonalize along ``b_axis`` (mT, along z) and follow levels adiabatically.

    Intervals whose overlaps are ambiguous are bisected up to ``max_refine``
    times; the extra points are used for tracking only.

    Raises
    ------
    ValueError
        If ``b_axis`` has fewer than two points or is not strictly increasing.
    TrackingError
        If an interval cannot be resolved.
    """
    b = np.asarray(b_axis, dtype=float)
    if b.ndim != 1 or len(b) < 2:
        raise ValueError("b_axis needs at least two points")
    if not np.all(np.diff(b) > 0):
        raise ValueError("b_axis must be strictly increasing")

    # track downward from the high-field end, where labels are assigned
    n_pts, dim = len(b), model.dim
    energies = np.empty((n_pts, dim))
    vectors = np.empty((n_pts, dim, dim), dtype=complex)
    order = np.empty((n_pts, dim), dtype=int)

    vals, vecs = diagonalize(model, b[-1])
    vecs = _align_degenerate(vals, vecs, np.eye(dim), _degeneracy_tol(vals))
    dom, labels = dominant_labels(model.space, vecs)
    # tracked level n is the eigenvector dominated by the n-th basis ket
    perm = np.argsort(dom)
    labels = [labels[k] for k in perm]
    basis = model.space.basis()
    qn = [basis[dom[k]] for k in perm]

    worst = 1.0
    energies[-1], vectors[-1], order[-1] = vals[perm], vecs[:, perm], perm
    for i in range(n_pts - 2, -1, -1):
        vals, vecs, perm, w = _track_interval(model, b[i + 1], b[i], vectors[i + 1], 0, max_refine)
        worst = min(worst, w)
        energies[i], vectors[i], order[i] = vals[perm], vecs[:, perm], perm
    return LevelDiagram(b, energies, vectors, labels, order, qn, worst)


def levels_at(model: SpinModel, bz: float, label_field: float = LABEL_FIELD,
              n_steps: int = 24) -> LevelDiagram:
    """Tracked levels at a single field, labelled by continuation to ``label_field``.

    The returned diagram has ``b_values[0] == bz``.
    """
    hi = max(label_field, bz)
    if hi == bz:
        hi = bz + 1e-6
    return sweep_levels(model, np.linspace(bz, hi, n_steps + 1))


@dataclass(frozen=True)
class AntiCrossing:
    lower: str
    upper: str
    b: float  # mT
    gap: float  # MHz


def anticrossings(diagram: LevelDiagram, min_gap: float = 1e-3) -> list[AntiCrossing]:
    """Interior gap minima between tracked levels that exchange character.

    A pair qualifies when its gap has a smooth interior minimum larger than
    ``min_gap`` (MHz) and each level's dominant ket on one side of the
    minimum becomes the other level's dominant ket on the far side.
    """
    e, vec = diagram.energies, diagram.vectors
    n_pts, dim = e.shape
    found = []
    for i in range(dim):
        for j in range(i + 1, dim):
            gap = np.abs(e[:, j] - e[:, i])
            for k in range(1, n_pts - 1):
                if not (gap[k] < gap[k - 1] and gap[k] <= gap[k + 1]) or gap[k] < min_gap:
                    continue
                wi_lo, wi_hi = np.abs(vec[0, :, i]) ** 2, np.abs(vec[-1, :, i]) ** 2
                wj_lo, wj_hi = np.abs(vec[0, :, j]) ** 2, np.abs(vec[-1, :, j]) ** 2
                if (np.argmax(wi_lo) == np.argmax(wj_hi) and np.argmax(wj_lo) == np.argmax(wi_hi)):
                    lo, hi = (i, j) if e[k, i] < e[k, j] else (j, i)
                    found.append(AntiCrossing(diagram.labels[lo], diagram.labels[hi],
                                              float(diagram.b_values[k]), float(gap[k])))
    return sorted(found, key=lambda a: a.b)


@dataclass(frozen=True)
class ClockResult:
    found: bool
    b_star: float = math.nan  # mT
    f_star: float = math.nan  # MHz
    slope: float = math.nan  # MHz/mT at b_star
    curvature: float = math.nan  # MHz/mT^2
    message: str = ""


class _PairTracker:
    """Transition frequency of a labelled level pair at arbitrary fields."""

    def __init__(self, model, pair, b_range, n_grid):
        self.model = model
        self.grid = np.linspace(b_range[0], b_range[1], n_grid)
        diagram = sweep_levels(model, np.union1d(self.grid, [max(LABEL_FIELD, b_range[1])]))
        self.diagram = diagram
        take = np.searchsorted(diagram.b_values, self.grid)
        self.vectors = diagram.vectors[take]
        self.levels = tuple(diagram.level(p) for p in pair)
        self.gap_grid = (diagram.energies[take, self.levels[1]]
                         - diagram.energies[take, self.levels[0]])

    def __call__(self, bz: float) -> float:
        k = int(np.argmin(np.abs(self.grid - bz)))
        vals, vecs = diagonalize(self.model, bz)
        ref = self.vectors[k][:, list(self.levels)]
        vecs = _align_degenerate(vals, vecs, ref, _degeneracy_tol(vals))
        ov = np.abs(ref.conj().T @ vecs) ** 2
        idx = [int(np.argmax(row)) for row in ov]
        return float(vals[idx[1]] - vals[idx[0]])


def _golden_minimize(fun: Callable[[float], float], a: float, b: float, tol: float) -> float:
    inv_phi = (math.sqrt(5) - 1) / 2
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def find_clock_transition(model: SpinModel, level_pair, b_range=(20.0, 40.0),
                          n_grid: int = 81, fd_step: float = 1e-3,
                          tol: float = 1e-7) -> ClockResult:
    """Locate the field where the pair's transition frequency is stationary.

    ``level_pair`` holds two high-field labels (e.g. ``"|↑,-5/2⟩"``).  A
    coarse grid brackets a sign change of d(ΔE)/dB; golden-section search
    on the central-difference derivative then refines it.  Without a sign
    change the result has ``found=False``.
    """
    lo, hi = map(float, b_range)
    if not hi > lo:
        raise ValueError("b_range must be increasing")
    tracker = _PairTracker(model, level_pair, (lo, hi), n_grid)
    grid, gap = tracker.grid, tracker.gap_grid
    slope = np.gradient(gap, grid)
    sign_change = np.nonzero(np.sign(slope[:-1]) * np.sign(slope[1:]) < 0)[0]
    if len(sign_change) == 0:
        return ClockResult(False, message=f"no stationary point of the transition frequency "
                                          f"between {lo} and {hi} mT")
    k = int(sign_change[np.argmin(np.abs(slope[sign_change]))])
    a, b = grid[max(k - 1, 0)], grid[min(k + 2, len(grid) - 1)]
    h = fd_step

    def abs_slope(x):
        return abs(tracker(x + h) - tracker(x - h)) / (2 * h)

    b_star = _golden_minimize(abs_slope, a, b, tol)
    # slope and curvature of the (positive) transition frequency
    f0, fp, fm = (abs(tracker(x)) for x in (b_star, b_star + h, b_star - h))
    return ClockResult(True, b_star, f0, (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / h ** 2,
                       "stationary point found")


@dataclass(frozen=True)
class Transition:
    level_i: str
    level_j: str
    frequency: float  # MHz
    drive_strength: float  # normalized |<j|H1|i>|
    matrix_element: float  # |<j|H1|i>| in MHz per mT of drive amplitude
    delta_mi: int


@dataclass
class TransitionTable:
    rows: list[Transition]
    b0: float
    levels: LevelDiagram = field(repr=False, default=None)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([r.frequency for r in self.rows])

    @property
    def strengths(self) -> np.ndarray:
        return np.array([r.drive_strength for r in self.rows])

    def find(self, a: str, b: str) -> Transition:
        ka, kb = _normalize_label(a), _normalize_label(b)
        for r in self.rows:
            if {_normalize_label(r.level_i), _normalize_label(r.level_j)} == {ka, kb}:
                return r
        raise KeyError(f"no tabulated transition between {a} and {b}")


def _nuclear_m(space, label: str, site: int = 1) -> float:
    return parse_ket(space, label)[site]


def transitions(model: SpinModel, b0: float, drive_axis=Z_AXIS, threshold: float = 0.0,
                pairs: Sequence[tuple[str, str]] = (), f_window=None,
                label_field: float = LABEL_FIELD) -> TransitionTable:
    """Drive-allowed transitions at field ``b0`` (mT, along z).

    Rows have normalized drive strength above ``threshold``; pairs listed in
    ``pairs`` are always included so that magnetically forbidden branches
    (e.g. the Δm_i = 2 line) can still be followed.  ``f_window`` optionally
    restricts frequencies to ``(f_min, f_max)`` MHz.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    diagram = levels_at(model, float(b0), label_field)
    e, v = diagram.energies[0], diagram.vectors[0]
    drive = v.conj().T @ model.drive_operator(drive_axis, 1.0) @ v
    mag = np.abs(drive)
    np.fill_diagonal(mag, 0.0)
    iu = np.triu_indices(len(e), 1)
    freq = np.abs(e[iu[1]] - e[iu[0]])
    keep = np.ones(len(freq), bool)
    if f_window is not None:
        keep &= (freq >= f_window[0]) & (freq <= f_window[1])
    scale = mag[iu][keep].max() if np.any(keep) else 0.0
    forced = {frozenset((diagram.level(a), diagram.level(b))) for a, b in pairs}
    rows = []
    has_v = len(model.space) > 1 and model.space.species[1].s > 0.5
    for n, (i, j) in enumerate(zip(*iu)):
        strength = mag[i, j] / scale if scale > 0 else 0.0
        if frozenset((i, j)) in forced or (keep[n] and strength > threshold):
            lo, hi = (i, j) if e[i] <= e[j] else (j, i)
            dmi = 0
            if has_v:
                dmi = int(round(_nuclear_m(model.space, diagram.labels[hi])
                                - _nuclear_m(model.space, diagram.labels[lo])))
            rows.append(Transition(diagram.labels[lo], diagram.labels[hi], float(e[hi] - e[lo]),
                                   float(min(strength, 1.0)), float(mag[i, j]), dmi))
    rows.sort(key=lambda r: r.frequency)
    return TransitionTable(rows, float(b0), diagram)


@dataclass(frozen=True)
class EnsembleComposition:
    """Weights of the DT0, DT_I and DT_II subensembles."""

    weights: tuple[float, ...]
    wavelength: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("composition needs at least one weight")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("composition weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"composition weights must sum to 1, got {w.sum()}")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def from_ratio(cls, *ratio, wavelength: str = "") -> "EnsembleComposition":
        total = float(sum(ratio))
        return cls(tuple(r / total for r in ratio), wavelength)


COMPOSITIONS = {
    "1278.86 nm": EnsembleComposition((1.0, 0.0, 0.0), "1278.86 nm"),
    "1278.76 nm": EnsembleComposition((0.2, 0.2, 0.6), "1278.76 nm"),
}


@dataclass
class SpectrumTrace:
    frequency: np.ndarray  # MHz
    intensity: np.ndarray
    b0: float
    composition: EnsembleComposition
    linewidth_fwhm: float
    sticks: list[tuple[float, float]] = field(default_factory=list, repr=False)

    @property
    def metadata(self) -> dict:
        return {"b0_mT": self.b0, "composition": list(self.composition.weights),
                "wavelength": self.composition.wavelength,
                "linewidth_fwhm_MHz": self.linewidth_fwhm}


def stick_spectrum(models: Sequence[SpinModel], b0: float, composition: EnsembleComposition,
                   f_window, drive_axis=Z_AXIS, threads: int = 1) -> list[tuple[float, float]]:
    """(frequency, weight) sticks; weight = w_sub |<j|H1|i>|^2 / dim.

    Dividing by the dimension gives each level the same population 1/dim,
    so subensembles compare per defect.
    """
    if len(models) != len(composition.weights):
        raise ValueError("need one model per composition weight")
    active = [(m, w) for m, w in zip(models, composition.weights) if w > 0]
    if not active:
        raise ValueError("empty composition")

    def one(item):
        m, w = item
        table = transitions(m, b0, drive_axis, 0.0, f_window=f_window)
        return [(r.frequency, w * r.matrix_element ** 2 / m.dim) for r in table]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(one, active))
    return [s for part in parts for s in part]


def broaden(sticks, f_axis, linewidth_fwhm: float) -> np.ndarray:
    f = np.asarray(f_axis, dtype=float)
    sigma = linewidth_fwhm * FWHM_TO_SIGMA
    out = np.zeros_like(f)
    for f0, w in sorted(sticks):
        out += w * np.exp(-0.5 * ((f - f0) / sigma) ** 2)
    return out


def odmr_spectrum(models: Sequence[SpinModel], b0: float, composition: EnsembleComposition,
                  linewidth_fwhm: float, f_axis, drive_axis=Z_AXIS, normalize: bool = True,
                  threads: int = 1) -> SpectrumTrace:
    """Gaussian-broadened ensemble ODMR spectrum at field ``b0``.

    ``models[k]`` is the subensemble weighted by ``composition.weights[k]``.
    With ``normalize`` the strongest feature is scaled to 1.
    """
    if not linewidth_fwhm > 0:
        raise ValueError("linewidth must be positive")
    f = np.asarray(f_axis, dtype=float)
    pad = 6 * linewidth_fwhm
    sticks = stick_spectrum(models, b0, composition, (f.min() - pad, f.max() + pad),
                            drive_axis, threads)
    y = broaden(sticks, f, linewidth_fwhm)
    if normalize and y.max() > 0:
        y = y / y.max()
    return SpectrumTrace(f, y, float(b0), composition, float(linewidth_fwhm), sticks)


def spectrum_peaks(trace: SpectrumTrace, min_prominence: float = 0.01):
    """Local maxima (frequency, height) with relative prominence above the cut."""
    y = trace.intensity
    scale = y.max() if y.max() > 0 else 1.0
    idx, _ = find_peaks(y / scale, prominence=min_prominence)
    return [(float(trace.frequency[i]), float(y[i])) for i in idx]


@dataclass(frozen=True)
class SidepeakSummary:
    central: float  # MHz
    central_height: float
    sidepeaks: tuple[tuple[float, float], ...]

    @property
    def offsets(self) -> np.ndarray:
        return np.array([f - self.central for f, _ in self.sidepeaks])

    @property
    def ratio(self) -> float:
        """Strongest sidepeak relative to the central height (0 if none)."""
        if not self.sidepeaks or self.central_height <= 0:
            return 0.0
        return max(h for _, h in self.sidepeaks) / self.central_height

    def asymmetry(self) -> float:
        """Worst mismatch between mirrored sidepeak offsets (MHz); inf if unpaired."""
        off = self.offsets
        left, right = np.sort(-off[off < 0]), np.sort(off[off > 0])
        if len(left) != len(right):
            return math.inf
        return float(np.max(np.abs(left - right))) if len(left) else 0.0


def sidepeaks(trace: SpectrumTrace, central_frequency: float,
              min_prominence: float = 0.01) -> SidepeakSummary:
    """Split spectrum maxima into the central line and its sidepeaks.

    Maxima within half a linewidth of ``central_frequency`` count as the
    central line; its height is the trace value at ``central_frequency``
    when no maximum lies there.
    """
    peaks = spectrum_peaks(trace, min_prominence)
    half = 0.5 * trace.linewidth_fwhm
    near = [p for p in peaks if abs(p[0] - central_frequency) <= half]
    side = tuple(p for p in peaks if abs(p[0] - central_frequency) > half)
    if near:
        height = max(h for _, h in near)
    else:
        height = float(np.interp(central_frequency, trace.frequency, trace.intensity))
    return SidepeakSummary(float(central_frequency), height, side)


CLOCK_PAIR = ("|↑,-5/2⟩", "|↓,-7/2⟩")


def with_spectator_labels(model: SpinModel, pair=CLOCK_PAIR) -> tuple[str, str]:
    """Extend V-system labels with 29Si projections for models with 29Si sites.

    The 29Si projections are fixed to +1/2, which picks one representative
    of the nuclear multiplet.
    """
    extra = len(model.space) - 2
    if extra <= 0:
        return tuple(pair)
    tail = "," + ",".join(["+1/2"] * extra)
    return tuple(p.rstrip("⟩") + tail + "⟩" for p in pair)
