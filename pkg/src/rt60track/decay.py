"""Ground-truth RT60 from impulse responses.

The energy decay curve (Schroeder backward integral) is fitted with a
decaying exponential plus a constant floor, ``m(t) = A exp(-delta t) + B``,
by least squares on the dB scale. The decay rate gives the RT60.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateInputError, NoDecayError
from .signal import SAMPLE_RATE, Air, AudioSignal

EDC_FLOOR_DB = -120.0
LN10_6 = 6.0 * math.log(10.0)

# delta grid brackets RT60 between 5 ms and 20 s
GRID_RT60_MIN = 0.005
GRID_RT60_MAX = 20.0
GRID_SIZE = 100

MAX_ITER = 200
STEP_TOL = 1e-6
MIN_SPAN_DB = 20.0
# a single impulse or step fits an exponential this badly
MAX_FIT_RMSE_DB = 5.0
MIN_FIT_POINTS = 32


@dataclass(frozen=True)
class EnergyDecayCurve:
    edc_db: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def times(self):
        return np.arange(self.edc_db.size) / self.sample_rate


@dataclass(frozen=True)
class DecayFit:
    decay_rate: float
    amplitude: float
    noise_floor: float
    fit_rmse_db: float
    iterations: int = 0

    @property
    def rt60(self):
        return rt60_from_decay(self.decay_rate)

    def as_dict(self):
        return {
            "decay_rate": self.decay_rate,
            "amplitude": self.amplitude,
            "noise_floor": self.noise_floor,
            "fit_rmse_db": self.fit_rmse_db,
            "iterations": self.iterations,
            "rt60": self.rt60,
        }


def schroeder_edc(air) -> EnergyDecayCurve:
    """Backward-integrated energy of an impulse response, in dB re. total energy."""
    if isinstance(air, Air):
        h = air.h.samples
    elif isinstance(air, AudioSignal):
        h = air.samples
    else:
        h = np.asarray(air, dtype=np.float64)
    if h.size == 0:
        raise ArgumentError("empty impulse response")
    energy = np.cumsum((h * h)[::-1])[::-1]
    if energy[0] <= 0.0:
        raise DegenerateInputError("impulse response is all zeros")
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(energy / energy[0])
    edc_db = np.maximum(edc_db, EDC_FLOOR_DB)
    edc_db[0] = 0.0
    return EnergyDecayCurve(edc_db)


def _fit_region(edc_db):
    """Samples used for fitting.

    The end of a finite-length EDC bends towards -inf as the integral runs
    out of signal, and integrated background noise there is a ramp rather
    than a constant. Fitting covers the first half of the curve and stops
    earlier if the curve enters the last 10 % of its decay range.
    """
    span = -edc_db.min()
    below = np.flatnonzero(edc_db < -0.9 * span)
    stop = below[0] if below.size else edc_db.size
    stop = min(stop, edc_db.size // 2)
    return slice(0, max(stop, 3))


def _closed_form_amplitudes(decay, energy, weights):
    """Weighted least-squares A, B >= 0 for a fixed decay shape."""
    w = weights
    s_ee = np.sum(w * decay * decay)
    s_e1 = np.sum(w * decay)
    s_11 = np.sum(w)
    s_ey = np.sum(w * decay * energy)
    s_1y = np.sum(w * energy)
    det = s_ee * s_11 - s_e1 * s_e1
    if det > 0:
        a = (s_ey * s_11 - s_e1 * s_1y) / det
        b = (s_ee * s_1y - s_e1 * s_ey) / det
        if a > 0 and b >= 0:
            return a, b
    a = s_ey / s_ee if s_ee > 0 else 0.0
    return a, 0.0


def _model_db(params, t):
    log_a, log_d, b = params
    return 10.0 * np.log10(np.exp(log_a - np.exp(log_d) * t) + b)


def _residual_jacobian(params, t, target_db):
    log_a, log_d, b = params
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        d = float(np.exp(log_d))
        e = np.exp(log_a - d * t)
        m = e + b
        r = 10.0 * np.log10(m) - target_db
        k = 10.0 / (math.log(10.0) * m)
        jac = np.empty((t.size, 3))
        jac[:, 0] = k * e
        jac[:, 1] = k * e * (-d * t)
        jac[:, 2] = k
    return r, jac


def _refine(params, t, target_db):
    """Projected Levenberg-Marquardt on (ln A, ln delta, B), with B >= 0."""
    p = np.array(params, dtype=np.float64)
    r, jac = _residual_jacobian(p, t, target_db)
    cost = float(r @ r)
    lam = 1e-3
    it = 0
    for it in range(1, MAX_ITER + 1):
        jtj = jac.T @ jac
        g = jac.T @ r
        scale = np.maximum(np.diag(jtj), 1e-30)
        accepted = False
        for _ in range(30):
            try:
                step = -np.linalg.solve(jtj + lam * np.diag(scale), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p + step
            trial[2] = max(trial[2], 0.0)
            r_t, jac_t = _residual_jacobian(trial, t, target_db)
            cost_t = float(r_t @ r_t)
            if np.isfinite(cost_t) and cost_t <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        actual = trial - p
        p, r, jac, cost = trial, r_t, jac_t, cost_t
        lam = max(lam / 10.0, 1e-12)
        ref = np.abs(p) + np.array([1.0, 1.0, 1e-12])
        if np.all(np.abs(actual) <= STEP_TOL * ref):
            break
    return p, cost, it


def fit_decay_model(edc: EnergyDecayCurve) -> DecayFit:
    """Fit ``A exp(-delta t) + B`` to an EDC by dB-domain least squares.

    A coarse log-spaced grid over ``delta`` (closed-form ``A, B`` per
    candidate) seeds a damped Gauss-Newton refinement of all three
    parameters.

    Raises
    ------
    NoDecayError
        If the curve spans less than 20 dB, leaves fewer than
        ``MIN_FIT_POINTS`` samples to fit, or the best grid candidate
        sits on the grid edge (decay faster than 5 ms or slower than 20 s
        in RT60 terms), or the refined fit misses the curve by more than
        5 dB rms.
    """
    edc_db = np.asarray(edc.edc_db, dtype=np.float64)
    if edc_db.size < 3 or -edc_db.min() < MIN_SPAN_DB:
        raise NoDecayError(
            f"EDC spans {-edc_db.min():.1f} dB, need at least {MIN_SPAN_DB:.0f} dB"
        )
    region = _fit_region(edc_db)
    target_db = edc_db[region]
    if target_db.size < MIN_FIT_POINTS:
        raise NoDecayError(f"EDC decays within {target_db.size} samples, need {MIN_FIT_POINTS}")
    t = np.arange(target_db.size) / edc.sample_rate
    energy = 10.0 ** (target_db / 10.0)
    weights = 1.0 / (energy * energy)

    deltas = LN10_6 / np.geomspace(GRID_RT60_MAX, GRID_RT60_MIN, GRID_SIZE)
    best = None
    for i, d in enumerate(deltas):
        decay = np.exp(-d * t)
        a, b = _closed_form_amplitudes(decay, energy, weights)
        if a <= 0:
            continue
        resid = 10.0 * np.log10(a * decay + b) - target_db
        cost = float(resid @ resid)
        if np.isfinite(cost) and (best is None or cost < best[0]):
            best = (cost, i, a, b)
    if best is None:
        raise NoDecayError("no decaying model candidate fits the EDC")
    cost, i_best, a0, b0 = best
    grid_rmse = math.sqrt(cost / t.size)
    if i_best in (0, GRID_SIZE - 1):
        raise NoDecayError(
            f"best decay candidate on grid edge (RT60 {LN10_6 / deltas[i_best]:.4f} s, "
            f"rmse {grid_rmse:.2f} dB)"
        )

    p, cost, iters = _refine((math.log(a0), math.log(deltas[i_best]), b0), t, target_db)
    delta = math.exp(p[1])
    if not delta > 0 or not np.isfinite(delta):
        raise NoDecayError("decay refinement diverged")
    rmse = math.sqrt(cost / t.size)
    if rmse > MAX_FIT_RMSE_DB:
        raise NoDecayError(f"EDC is not exponential (fit rmse {rmse:.1f} dB)")
    return DecayFit(
        decay_rate=delta,
        amplitude=math.exp(p[0]),
        noise_floor=float(p[2]),
        fit_rmse_db=rmse,
        iterations=iters,
    )


def rt60_from_decay(delta: float) -> float:
    """Time for ``10 log10 exp(-delta t)`` to fall by 60 dB."""
    if not delta > 0:
        raise ArgumentError(f"decay rate must be positive, got {delta}")
    return LN10_6 / delta


def ground_truth_rt60(air) -> float:
    return rt60_from_decay(fit_decay_model(schroeder_edc(air)).decay_rate)
