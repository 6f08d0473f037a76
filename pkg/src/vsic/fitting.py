"""Least-squares fits of Ramsey, Rabi and ODMR traces.

Ramsey model::

    y(t) = c + sum_i a_i exp(-t / T2_i) sin(2 pi f_i t + phi_i)

with either one shared ``T2`` or one per component.  Spectra are fitted
with Gaussians on a constant baseline.  The optimizer is the trust-region
reflective solver of :func:`scipy.optimize.least_squares` with analytic
Jacobians; confidence intervals come from the linearized covariance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .spectra import FWHM_TO_SIGMA

SHARED = "shared-T2"
PER_COMPONENT = "per-component-T2"
TWO_PI = 2 * math.pi


class FitError(ValueError):
    pass


# ------------------------------------------------------------------ models


class CurveModel:
    """Parameter layout plus model value and Jacobian."""

    names: list[str]

    @property
    def n_params(self) -> int:
        return len(self.names)

    def value(self, x, p) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def jacobian(self, x, p) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def bounds(self):
        return -np.inf * np.ones(self.n_params), np.inf * np.ones(self.n_params)

    def canonical(self, p) -> np.ndarray:
        return np.array(p, dtype=float)

    def describe(self) -> dict:
        return {"model": type(self).__name__}


@dataclass
class RamseyModel(CurveModel):
    """Damped sinusoids on a constant offset.

    Parameters are ordered ``[c, a_1, f_1, phi_1, (T2_1), ..., (T2)]``.
    """

    n: int = 1
    sharing: str = PER_COMPONENT
    offset: bool = True
    t2_floor: float = 1e-6  # µs

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one component")
        if self.sharing not in (SHARED, PER_COMPONENT):
            raise ValueError(f"sharing must be {SHARED!r} or {PER_COMPONENT!r}")
        names = ["c"] if self.offset else []
        for i in range(1, self.n + 1):
            names += [f"a_{i}", f"f_{i}", f"phi_{i}"]
            if self.sharing == PER_COMPONENT:
                names.append(f"T2_{i}")
        if self.sharing == SHARED:
            names.append("T2")
        self.names = names

    def _split(self, p):
        p = np.asarray(p, dtype=float)
        c = p[0] if self.offset else 0.0
        body = p[1:] if self.offset else p
        if self.sharing == PER_COMPONENT:
            comp = body.reshape(self.n, 4)
            return c, comp[:, 0], comp[:, 1], comp[:, 2], comp[:, 3]
        comp = body[:-1].reshape(self.n, 3)
        return c, comp[:, 0], comp[:, 1], comp[:, 2], np.full(self.n, body[-1])

    def pack(self, c, a, f, phi, t2) -> np.ndarray:
        a, f, phi, t2 = (np.broadcast_to(np.asarray(v, float), (self.n,)) for v in (a, f, phi, t2))
        out = [c] if self.offset else []
        for i in range(self.n):
            out += [a[i], f[i], phi[i]]
            if self.sharing == PER_COMPONENT:
                out.append(t2[i])
        if self.sharing == SHARED:
            out.append(t2[0])
        return np.array(out, dtype=float)

    def components(self, p) -> dict[str, np.ndarray]:
        c, a, f, phi, t2 = self._split(p)
        return {"c": c, "a": a, "f": f, "phi": phi, "T2": t2}

    def value(self, t, p):
        t = np.asarray(t, dtype=float)
        c, a, f, phi, t2 = self._split(p)
        env = np.exp(-t[:, None] / t2[None, :])
        return c + np.sum(a * env * np.sin(TWO_PI * f * t[:, None] + phi), axis=1)

    def jacobian(self, t, p):
        t = np.asarray(t, dtype=float)[:, None]
        c, a, f, phi, t2 = self._split(p)
        env = np.exp(-t / t2)
        th = TWO_PI * f * t + phi
        s, co = np.sin(th), np.cos(th)
        d_a = env * s
        d_f = a * env * co * TWO_PI * t
        d_phi = a * env * co
        d_t2 = a * env * s * t / t2 ** 2
        cols = [np.ones(len(t))] if self.offset else []
        for i in range(self.n):
            cols += [d_a[:, i], d_f[:, i], d_phi[:, i]]
            if self.sharing == PER_COMPONENT:
                cols.append(d_t2[:, i])
        if self.sharing == SHARED:
            cols.append(d_t2.sum(axis=1))
        return np.column_stack(cols)

    def bounds(self):
        lo, hi = super().bounds()
        for k, name in enumerate(self.names):
            if name.startswith("T2"):
                lo[k] = self.t2_floor
        return lo, hi

    def canonical(self, p):
        c, a, f, phi, t2 = self._split(p)
        a, f, phi = a.copy(), f.copy(), phi.copy()
        neg_f = f < 0
        f[neg_f] = -f[neg_f]
        phi[neg_f] = math.pi - phi[neg_f]
        neg_a = a < 0
        a[neg_a] = -a[neg_a]
        phi[neg_a] += math.pi
        phi = np.mod(phi, TWO_PI)
        order = np.argsort(f, kind="stable")
        return self.pack(c, a[order], f[order], phi[order], t2[order])

    def describe(self):
        return {"model": "ramsey", "n": self.n, "sharing": self.sharing, "offset": self.offset}


@dataclass
class RabiModel(RamseyModel):
    """Damped sinusoids in pulse duration with a common drive-dephasing time."""

    sharing: str = SHARED

    def __post_init__(self):
        if self.sharing != SHARED:
            raise ValueError("Rabi components share one drive-dephasing time")
        super().__post_init__()

    def describe(self):
        return {"model": "rabi", "n": self.n, "offset": self.offset}


@dataclass
class GaussianPeakModel(CurveModel):
    """Gaussian lines on a constant baseline; ``[b, A_1, x_1, w_1, ...]`` with w the FWHM."""

    n: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one peak")
        self.names = ["baseline"] + [f"{k}_{i}" for i in range(1, self.n + 1)
                                     for k in ("amplitude", "center", "fwhm")]

    def _split(self, p):
        p = np.asarray(p, dtype=float)
        comp = p[1:].reshape(self.n, 3)
        return p[0], comp[:, 0], comp[:, 1], comp[:, 2]

    def components(self, p):
        b, amp, x0, w = self._split(p)
        return {"baseline": b, "amplitude": amp, "center": x0, "fwhm": w}

    def value(self, x, p):
        x = np.asarray(x, dtype=float)[:, None]
        b, amp, x0, w = self._split(p)
        sig = w * FWHM_TO_SIGMA
        return b + np.sum(amp * np.exp(-0.5 * ((x - x0) / sig) ** 2), axis=1)

    def jacobian(self, x, p):
        x = np.asarray(x, dtype=float)[:, None]
        b, amp, x0, w = self._split(p)
        sig = w * FWHM_TO_SIGMA
        u = (x - x0) / sig
        g = np.exp(-0.5 * u ** 2)
        cols = [np.ones(len(x))]
        for i in range(self.n):
            cols += [g[:, i], amp[i] * g[:, i] * u[:, i] / sig[i],
                     amp[i] * g[:, i] * u[:, i] ** 2 / w[i]]
        return np.column_stack(cols)

    def bounds(self):
        lo, hi = super().bounds()
        lo[3::3] = 1e-9
        return lo, hi

    def canonical(self, p):
        b, amp, x0, w = self._split(p)
        order = np.argsort(x0, kind="stable")
        out = [b]
        for i in order:
            out += [amp[i], x0[i], abs(w[i])]
        return np.array(out)

    def describe(self):
        return {"model": "gaussian", "n": self.n}


# ------------------------------------------------------------------ results


@dataclass
class FitResult:
    model: CurveModel
    estimates: dict[str, float]
    ci95: dict[str, float]
    covariance: np.ndarray | None
    residual_norm: float
    initial_residual_norm: float
    converged: bool
    iterations: int
    n_points: int
    message: str = ""

    @property
    def params(self) -> np.ndarray:
        return np.array([self.estimates[k] for k in self.model.names])

    @property
    def dof(self) -> int:
        return self.n_points - self.model.n_params

    def predict(self, x) -> np.ndarray:
        return self.model.value(x, self.params)

    def components(self) -> dict:
        return self.model.components(self.params)

    def bic(self) -> float:
        rss = max(self.residual_norm ** 2, np.finfo(float).tiny)
        n = self.n_points
        return n * math.log(rss / n) + self.model.n_params * math.log(n)

    def to_dict(self) -> dict:
        status = "converged" if self.converged else "non-converged"
        return {
            **self.model.describe(),
            "status": status,
            "estimates": self.estimates,
            "ci95_halfwidth": self.ci95,
            "residual_norm": self.residual_norm,
            "initial_residual_norm": self.initial_residual_norm,
            "iterations": self.iterations,
            "n_points": self.n_points,
            "message": self.message,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default, **kw)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def fit_curve(model: CurveModel, x, y, initial_guess, weight=None, max_nfev: int = 2000,
              tol: float = 1e-12) -> FitResult:
    """Local least-squares optimum of ``model`` starting from ``initial_guess``.

    ``weight`` holds per-point statistical weights (1/sigma^2); uniform by
    default.  The returned residual never exceeds that of the initial guess.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(initial_guess, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be 1-D arrays of equal length")
    if p0.shape != (model.n_params,):
        raise FitError(f"initial guess needs {model.n_params} values, got {p0.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(p0))):
        raise FitError("data and initial guess must be finite")
    if len(x) < 2 * model.n_params:
        raise FitError(f"{len(x)} points is fewer than twice the {model.n_params} free parameters")
    w = np.ones_like(y) if weight is None else np.asarray(weight, dtype=float)
    if w.shape != y.shape or np.any(~np.isfinite(w)) or np.any(w < 0):
        raise FitError("weights must be finite and non-negative")
    sw = np.sqrt(w)

    lo, hi = model.bounds()
    p0 = np.clip(p0, lo, hi)

    def resid(p):
        return sw * (model.value(x, p) - y)

    def jac(p):
        return sw[:, None] * model.jacobian(x, p)

    r0 = float(np.linalg.norm(resid(p0)))
    res = least_squares(resid, p0, jac=jac, bounds=(lo, hi), method="trf", x_scale="jac",
                        ftol=tol, xtol=tol, gtol=tol, max_nfev=max_nfev)
    p, converged, msg = res.x, bool(res.status > 0), res.message
    r = float(np.linalg.norm(res.fun))
    if r > r0:
        p, r, converged = p0, r0, False
        msg = "optimizer increased the residual; initial guess returned"
    p = model.canonical(p)
    r = float(np.linalg.norm(resid(p)))

    J = jac(p)
    dof = len(y) - model.n_params
    cov, ci = None, {k: math.nan for k in model.names}
    jtj = J.T @ J
    if not np.all(np.isfinite(J)) or np.linalg.matrix_rank(J) < model.n_params:
        converged = False
        msg = (msg + "; " if msg else "") + "singular Jacobian, parameters not identifiable"
    else:
        cov = (r ** 2 / dof) * np.linalg.inv(jtj)
        q = stats.t.ppf(0.975, dof)
        ci = {k: float(q * math.sqrt(max(cov[i, i], 0.0))) for i, k in enumerate(model.names)}
    est = {k: float(v) for k, v in zip(model.names, p)}
    return FitResult(model, est, ci, cov, r, r0, converged, int(res.nfev), len(y), msg)


# ------------------------------------------------------------------ seeding


def dft_peaks(t, y, n: int, pad: int = 8, f_min: float = 0.0) -> np.ndarray:
    """Frequencies (MHz) of the ``n`` largest peaks of the zero-padded DFT."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float) - np.mean(y)
    dt = float(np.median(np.diff(t)))
    m = pad * len(y)
    spec = np.abs(np.fft.rfft(y, m))
    freqs = np.fft.rfftfreq(m, dt)
    interior = (spec[1:-1] > spec[:-2]) & (spec[1:-1] >= spec[2:])
    idx = np.nonzero(interior)[0] + 1
    idx = idx[freqs[idx] > f_min]
    idx = idx[np.argsort(spec[idx])[::-1]]
    resolution = 1.0 / (t[-1] - t[0])
    chosen: list[int] = []
    for k in idx:
        if all(abs(freqs[k] - freqs[j]) > 0.5 * resolution for j in chosen):
            chosen.append(k)
        if len(chosen) == n:
            break
    return np.sort(freqs[chosen])


@dataclass
class PencilComponent:
    frequency: float  # MHz, >= 0
    damping: float  # 1/µs
    amplitude: float  # of a sin(2 pi f t + phase) term, or the constant for f = 0
    phase: float


def matrix_pencil(t, y, order: int | None = None, rel_tol: float = 1e-9) -> list[PencilComponent]:
    """Decompose uniformly sampled real data into damped sinusoids.

    The model order is the number of Hankel singular values above
    ``rel_tol`` times the largest, unless given.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    dt = float(t[1] - t[0])
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise FitError("matrix pencil needs uniform sampling")
    N = len(y)
    L = N // 2
    hankel = np.lib.stride_tricks.sliding_window_view(y, L + 1)
    _, s, vh = np.linalg.svd(hankel, full_matrices=False)
    if s[0] == 0:
        return []
    M = int(np.sum(s > rel_tol * s[0])) if order is None else int(order)
    M = max(1, min(M, L))
    v = vh[:M].conj().T
    z = np.linalg.eigvals(np.linalg.pinv(v[:-1]) @ v[1:])
    basis = np.power.outer(z, np.arange(N)).T
    coef = np.linalg.lstsq(basis, y.astype(complex), rcond=None)[0]
    shift = np.exp(np.log(z) * (-t[0] / dt))
    coef = coef * shift  # refer amplitudes to t = 0
    out = []
    for zk, ck in zip(z, coef):
        f = float(np.angle(zk) / (TWO_PI * dt))
        g = float(-np.log(abs(zk)) / dt)
        if abs(f) < 1e-9 / dt:
            out.append(PencilComponent(0.0, g, float(ck.real), 0.0))
        elif f > 0:
            out.append(PencilComponent(f, g, float(2 * abs(ck)),
                                       float(np.mod(np.angle(ck) + math.pi / 2, TWO_PI))))
    out.sort(key=lambda c: c.frequency)
    return out


def pencil_seeds(t, y, n: int) -> list[PencilComponent]:
    """The ``n`` strongest decaying components of an over-ordered matrix pencil."""
    t = np.asarray(t, dtype=float)
    nyquist = 0.5 / float(t[1] - t[0])
    comps = [c for c in matrix_pencil(t, y, order=6 * n + 1, rel_tol=0.0)
             if 0 < c.frequency < 0.8 * nyquist and c.damping > 0]
    comps.sort(key=lambda c: -c.amplitude)
    return sorted(comps[:n], key=lambda c: c.frequency)


def seed_frequencies(t, y, n: int, method: str = "dft") -> np.ndarray:
    """Initial frequency guesses, from DFT peaks or a matrix pencil."""
    if method == "dft":
        f = dft_peaks(t, y, n)
    elif method == "pencil":
        f = np.array([c.frequency for c in pencil_seeds(t, y, n)])
    else:
        raise ValueError(f"unknown seeding method {method!r}")
    if len(f) < n:
        # pad with spread guesses so the layout is complete
        top = f.max() if len(f) else 0.5
        f = np.sort(np.concatenate([f, np.linspace(top, 2 * top, n - len(f) + 1)[1:]]))
    return f


def linear_seed(model: RamseyModel, t, y, freqs, t2) -> np.ndarray:
    """Amplitudes, phases and offset by linear least squares at fixed f and T2."""
    t = np.asarray(t, dtype=float)
    freqs = np.asarray(freqs, dtype=float)
    t2 = np.broadcast_to(np.asarray(t2, dtype=float), freqs.shape)
    env = np.exp(-t[:, None] / t2)
    cols = [np.ones_like(t)] if model.offset else []
    for k in range(len(freqs)):
        cols += [env[:, k] * np.sin(TWO_PI * freqs[k] * t), env[:, k] * np.cos(TWO_PI * freqs[k] * t)]
    coef = np.linalg.lstsq(np.column_stack(cols), y, rcond=None)[0]
    c = coef[0] if model.offset else 0.0
    sc = coef[1:] if model.offset else coef
    s_, c_ = sc[0::2], sc[1::2]
    return model.pack(c, np.hypot(s_, c_), freqs, np.arctan2(c_, s_), t2)


def _better(new: FitResult, best: FitResult | None) -> bool:
    return best is None or (new.converged, -new.residual_norm) > (best.converged, -best.residual_norm)


def fit_ramsey(t, y, n: int, sharing: str = PER_COMPONENT, weight=None, freqs=None,
               t2_guesses=None, offset: bool = True) -> FitResult:
    """Seeded multi-start Ramsey fit.

    Starts combine DFT frequency seeds with a few common ``T2`` guesses,
    plus one start from a matrix-pencil decomposition (frequencies and
    per-component decay).  Given ``freqs`` replace both seed sources.  The
    best converged optimum is returned.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    model = RamseyModel(n, sharing, offset)
    span = float(t[-1] - t[0])
    if t2_guesses is None:
        t2_guesses = (span / 20, span / 6, span / 2)
    starts = []
    if freqs is not None:
        starts += [(np.asarray(freqs, float), g) for g in t2_guesses]
    else:
        starts += [(seed_frequencies(t, y, n, "dft"), g) for g in t2_guesses]
        pc = pencil_seeds(t, y, n)
        if len(pc) == n:
            t2 = np.clip([1 / c.damping for c in pc], span / 100, 10 * span)
            if sharing == SHARED:
                t2 = float(np.exp(np.mean(np.log(t2))))
            starts.append((np.array([c.frequency for c in pc]), t2))
    best = None
    for f0, g in starts:
        res = fit_curve(model, t, y, linear_seed(model, t, y, f0, g), weight)
        if _better(res, best):
            best = res
    return best


def fit_rabi(t, y, n: int = 1, weight=None, freqs=None) -> FitResult:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    model = RabiModel(n)
    if freqs is None:
        freqs = seed_frequencies(t, y, n)
    best = None
    for g in ((t[-1] - t[0]) / 3, 10 * (t[-1] - t[0])):
        res = fit_curve(model, t, y, linear_seed(model, t, y, freqs, g), weight)
        if _better(res, best):
            best = res
    return best


def fit_spectrum(f, y, n: int, centers=None, fwhm: float | None = None, weight=None) -> FitResult:
    """Multi-Gaussian fit; centers seeded from the largest local maxima."""
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    model = GaussianPeakModel(n)
    base = float(np.min(y))
    if centers is None:
        # rank maxima by prominence so noise wiggles on a tall line lose
        idx, props = find_peaks(y, prominence=0.0)
        top = idx[np.argsort(props["prominences"])[::-1][:n]]
        centers = np.sort(f[top])
        if len(centers) < n:
            raise FitError(f"found only {len(centers)} maxima for {n} peaks")
    centers = np.asarray(centers, dtype=float)
    w0 = fwhm if fwhm is not None else max(4 * float(np.median(np.diff(f))),
                                           0.5 * float(np.min(np.diff(centers))) if n > 1 else 0.5)
    amps = np.interp(centers, f, y) - base
    p0 = [base] + [v for a, c in zip(amps, centers) for v in (a, c, w0)]
    return fit_curve(model, f, y, p0, weight)


# --------------------------------------------------------- model selection


@dataclass
class SharingSelection:
    choice: str | None  # None means abstain
    bic_shared: float
    bic_per_component: float
    residual_shared: float
    residual_per_component: float
    shared: FitResult | None = None
    per_component: FitResult | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return {"choice": self.choice or "abstain", "bic_shared": self.bic_shared,
                "bic_per_component": self.bic_per_component,
                "residual_shared": self.residual_shared,
                "residual_per_component": self.residual_per_component, "message": self.message}


def model_select_t2_sharing(t, y, n: int, weight=None, freqs=None) -> SharingSelection:
    """Choose shared or per-component T2 by the Bayesian information criterion.

    Each layout is fitted from its own seeds and from the other layout's
    optimum.  Extra parameters are charged ``log(N)`` each against the
    residual gain.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    nan = math.nan
    if np.ptp(y) == 0 or not np.all(np.isfinite(y)):
        return SharingSelection(None, nan, nan, nan, nan, message="degenerate data: abstaining")
    try:
        shared = fit_ramsey(t, y, n, SHARED, weight, freqs)
        per = fit_ramsey(t, y, n, PER_COMPONENT, weight, freqs)
        # cross-start each layout from the other's optimum
        c = shared.components()
        per_model = RamseyModel(n, PER_COMPONENT)
        alt = fit_curve(per_model, t, y, per_model.pack(c["c"], c["a"], c["f"], c["phi"], c["T2"]), weight)
        per = alt if _better(alt, per) else per
        c = per.components()
        shared_model = RamseyModel(n, SHARED)
        t2 = float(np.exp(np.mean(np.log(c["T2"]))))
        alt = fit_curve(shared_model, t, y,
                        shared_model.pack(c["c"], c["a"], c["f"], c["phi"], t2), weight)
        shared = alt if _better(alt, shared) else shared
    except FitError as exc:
        return SharingSelection(None, nan, nan, nan, nan, message=f"abstaining: {exc}")
    sel = SharingSelection(None, shared.bic(), per.bic(), shared.residual_norm, per.residual_norm,
                           shared, per)
    if not (shared.converged and per.converged):
        sel.message = "a fit did not converge: abstaining"
        return sel
    sel.choice = PER_COMPONENT if per.bic() < shared.bic() else SHARED
    return sel


# ------------------------------------------------------------------ I/O


def read_trace_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read ``x, y[, stderr]`` from a CSV with a header row (first three columns)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FitError(f"{path}: empty file")
    try:
        data = np.array([[float(v) for v in r[:3]] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise FitError(f"{path}: non-numeric data ({exc})") from None
    if data.ndim != 2 or data.shape[1] < 2:
        raise FitError(f"{path}: need at least two columns")
    err = data[:, 2] if data.shape[1] > 2 else None
    return data[:, 0], data[:, 1], err


def write_fit_json(result: FitResult, path) -> None:
    Path(path).write_text(result.to_json() + "\n")
