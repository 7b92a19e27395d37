"""Gaussian peak fitting on coincidence histograms.

Model for a single peak on a flat background:

    f(dt) = bg + A * exp(-(dt - mu)^2 / (2 sigma^2))

The solver is a damped Gauss-Newton iteration (Levenberg-Marquardt
flavor): the normal equations get a multiplicative damping term that
grows tenfold whenever a step fails to reduce chi^2 and shrinks tenfold
on success.  Residuals carry Poisson weights 1 / max(count, 1) in raw
count units; normalized histograms rescale the same weights.  No external
optimizer is involved, so results are deterministic across platforms.

Peak significance is a property of the result, not an error: a fitted
contrast smaller than three times its own uncertainty yields a regular
fit object with ``significant == False``.  When the background itself is
consistent with zero the contrast ratio carries no information (its
uncertainty diverges), so the decision falls back to the amplitude
against its own error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coincidence import DeltaHistogram
from .errors import FitError

MAX_ITERATIONS = 200
REL_STEP_TOL = 1e-8
REL_CHI2_TOL = 1e-10
LAMBDA_START = 1e-3
LAMBDA_MAX = 1e12
SIGNIFICANCE_SIGMAS = 3.0


# ---------------------------------------------------------------------------
# model

def gauss_model(x: np.ndarray, params: np.ndarray) -> np.ndarray:
    bg, amp, mu, sigma = params
    z = (x - mu) / sigma
    return bg + amp * np.exp(-0.5 * z * z)


def gauss_jacobian(x: np.ndarray, params: np.ndarray) -> np.ndarray:
    """Analytic d model / d (bg, amp, mu, sigma), shape (n, 4)."""
    bg, amp, mu, sigma = params
    z = (x - mu) / sigma
    e = np.exp(-0.5 * z * z)
    jac = np.empty((len(x), 4))
    jac[:, 0] = 1.0
    jac[:, 1] = e
    jac[:, 2] = amp * e * z / sigma
    jac[:, 3] = amp * e * z * z / sigma
    return jac


def two_gauss_model(x: np.ndarray, params: np.ndarray) -> np.ndarray:
    bg, a1, mu1, s1, a2, mu2, s2 = params
    z1 = (x - mu1) / s1
    z2 = (x - mu2) / s2
    return bg + a1 * np.exp(-0.5 * z1 * z1) + a2 * np.exp(-0.5 * z2 * z2)


def two_gauss_jacobian(x: np.ndarray, params: np.ndarray) -> np.ndarray:
    bg, a1, mu1, s1, a2, mu2, s2 = params
    jac = np.empty((len(x), 7))
    jac[:, 0] = 1.0
    for k, (a, mu, s) in enumerate(((a1, mu1, s1), (a2, mu2, s2))):
        z = (x - mu) / s
        e = np.exp(-0.5 * z * z)
        jac[:, 1 + 3 * k] = e
        jac[:, 2 + 3 * k] = a * e * z / s
        jac[:, 3 + 3 * k] = a * e * z * z / s
    return jac


# ---------------------------------------------------------------------------
# results

@dataclass(frozen=True)
class GaussianFit:
    bg: float
    amplitude: float
    center_ps: float
    sigma_ps: float
    bg_err: float
    amplitude_err: float
    center_err_ps: float
    sigma_err_ps: float
    contrast: float
    contrast_err: float
    significant: bool
    chi2: float
    dof: int
    n_iterations: int
    covariance: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "bg": self.bg, "bg_err": self.bg_err,
            "amplitude": self.amplitude, "amplitude_err": self.amplitude_err,
            "center_ps": self.center_ps, "center_err_ps": self.center_err_ps,
            "sigma_ps": self.sigma_ps, "sigma_err_ps": self.sigma_err_ps,
            "contrast": self.contrast, "contrast_err": self.contrast_err,
            "significant": self.significant,
            "chi2": self.chi2, "dof": self.dof,
            "n_iterations": self.n_iterations,
        }


@dataclass(frozen=True)
class PeakComponent:
    amplitude: float
    center_ps: float
    sigma_ps: float
    amplitude_err: float
    center_err_ps: float
    sigma_err_ps: float
    contrast: float
    contrast_err: float
    significant: bool

    def to_json_dict(self) -> dict:
        return {
            "amplitude": self.amplitude, "amplitude_err": self.amplitude_err,
            "center_ps": self.center_ps, "center_err_ps": self.center_err_ps,
            "sigma_ps": self.sigma_ps, "sigma_err_ps": self.sigma_err_ps,
            "contrast": self.contrast, "contrast_err": self.contrast_err,
            "significant": self.significant,
        }


@dataclass(frozen=True)
class TwoPeakFit:
    """Joint two-Gaussian fit with shared background.

    ``near`` is the component whose center sits closer to dt = 0 (the
    cross-talk peak in a combined scan); ``far`` is the other one.
    """

    bg: float
    bg_err: float
    near: PeakComponent
    far: PeakComponent
    separation_ps: float
    separation_err_ps: float
    chi2: float
    dof: int
    n_iterations: int
    covariance: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "bg": self.bg, "bg_err": self.bg_err,
            "near_peak": self.near.to_json_dict(),
            "far_peak": self.far.to_json_dict(),
            "separation_ps": self.separation_ps,
            "separation_err_ps": self.separation_err_ps,
            "chi2": self.chi2, "dof": self.dof,
            "n_iterations": self.n_iterations,
        }


# ---------------------------------------------------------------------------
# solver

def _levmar(x, y, weights, model, jacobian, p0, *, lower, upper):
    """Damped Gauss-Newton least squares with box projection.

    Returns (params, covariance, chi2, iterations).  Raises FitError on
    non-convergence, carrying the last iterate.
    """
    p = np.array(p0, dtype=np.float64)
    p = np.clip(p, lower, upper)

    def chi2_of(params):
        r = y - model(x, params)
        return float(np.sum(weights * r * r))

    chi2 = chi2_of(p)
    if not np.isfinite(chi2):
        raise FitError("seed parameters give non-finite chi^2", last_estimate=p)

    lam = LAMBDA_START
    normal = grad = None
    converged = False
    it = 0
    while it < MAX_ITERATIONS:
        it += 1
        if normal is None:
            jac = jacobian(x, p)
            r = y - model(x, p)
            jw = jac * weights[:, None]
            normal = jac.T @ jw
            grad = jw.T @ r
        damp = np.diag(normal).copy()
        floor = 1e-12 * max(damp.max(), 1.0)
        damp[damp < floor] = floor
        try:
            step = np.linalg.solve(normal + lam * np.diag(damp), grad)
        except np.linalg.LinAlgError:
            lam *= 10.0
            if lam > LAMBDA_MAX:
                raise FitError("normal equations singular", last_estimate=p)
            continue
        p_new = np.clip(p + step, lower, upper)
        chi2_new = chi2_of(p_new)
        if np.isfinite(chi2_new) and chi2_new <= chi2:
            moved = np.abs(p_new - p) / np.maximum(np.abs(p_new), 1e-30)
            gain = chi2 - chi2_new
            stalled = gain <= REL_CHI2_TOL * max(chi2, 1e-300)
            p, chi2 = p_new, chi2_new
            normal = grad = None
            lam = max(lam / 10.0, 1e-12)
            # The relative-step test alone cannot fire for a parameter
            # heading to zero, so a negligible chi^2 gain also counts as
            # converged.
            if moved.max() < REL_STEP_TOL or stalled:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > LAMBDA_MAX:
                # No downhill step left.  At a genuine optimum the
                # predicted decrease is negligible; anything else is a
                # real failure.
                predicted = abs(float(grad @ step))
                if predicted <= 1e-10 * max(chi2, 1e-300):
                    converged = True
                    break
                raise FitError("fit stalled before converging",
                               last_estimate=p)

    if not converged:
        raise FitError(f"fit did not converge in {MAX_ITERATIONS} iterations",
                       last_estimate=p)

    jac = jacobian(x, p)
    cov = _gauss_newton_covariance(jac, weights)
    return p, cov, chi2, it


def _gauss_newton_covariance(jac, weights):
    """(J^T W J)^-1 via eigendecomposition; unconstrained directions get
    infinite variance instead of crashing on a singular matrix."""
    normal = jac.T @ (jac * weights[:, None])
    vals, vecs = np.linalg.eigh(normal)
    tol = max(vals.max(), 0.0) * 1e-12
    good = vals > tol
    inv_vals = np.zeros_like(vals)
    inv_vals[good] = 1.0 / vals[good]
    cov = (vecs * inv_vals) @ vecs.T
    if not good.all():
        null_weight = (vecs[:, ~good] ** 2).sum(axis=1)
        dead = null_weight > 1e-12
        cov[dead, :] = np.inf
        cov[:, dead] = np.inf
        np.fill_diagonal(cov, np.where(dead, np.inf, np.diag(cov)))
    return cov


def _is_significant(amp, amp_err, bg, bg_err, contrast, contrast_err) -> bool:
    """Peak-detection decision.

    With a resolved background (bg at least three sigma above zero) the
    criterion is contrast >= 3 x its propagated uncertainty.  An
    unresolved background inflates that uncertainty without bound even
    for overwhelming peaks, so the decision then rests on the amplitude
    alone.
    """
    resolved = bg > 0 and np.isfinite(bg_err) \
        and bg >= SIGNIFICANCE_SIGMAS * bg_err
    if resolved and np.isfinite(contrast) and np.isfinite(contrast_err):
        return bool(contrast >= SIGNIFICANCE_SIGMAS * contrast_err)
    return bool(np.isfinite(amp_err) and amp_err > 0
                and amp >= SIGNIFICANCE_SIGMAS * amp_err)


def _contrast_and_error(amp, bg, cov, i_amp, i_bg):
    """A/bg with first-order error propagation including cov(A, bg)."""
    if bg <= 0 or not np.isfinite(bg):
        return np.nan, np.inf
    contrast = amp / bg
    va = cov[i_amp, i_amp]
    vb = cov[i_bg, i_bg]
    cab = cov[i_amp, i_bg]
    if not (np.isfinite(va) and np.isfinite(vb) and np.isfinite(cab)):
        return contrast, np.inf
    var = va / bg**2 + amp**2 * vb / bg**4 - 2.0 * amp * cab / bg**3
    return contrast, float(np.sqrt(max(var, 0.0)))


# ---------------------------------------------------------------------------
# data extraction and seeding

def _fit_arrays(hist: DeltaHistogram):
    """(x, y, weights) in the units the histogram carries.

    Raw counts get Poisson weights 1/max(count, 1); a normalized histogram
    scales both data and weights by the stored median, which leaves the
    chi^2 of any model/data pair unchanged.
    """
    x = hist.bin_centers
    counts = hist.counts.astype(np.float64)
    var_raw = np.maximum(counts, 1.0)
    if hist.normalized is not None:
        y = hist.normalized.astype(np.float64)
        weights = hist.median_count**2 / var_raw
    else:
        y = counts
        weights = 1.0 / var_raw
    return x, y, weights


def _single_peak_seed(x, y):
    bg = float(np.median(y))
    peak = int(np.argmax(y))
    amp = float(y[peak] - bg)
    mu = float(x[peak])
    sigma = _fwhm_sigma(x, y, bg, amp, peak)
    return np.array([bg, amp, mu, sigma])


def _fwhm_sigma(x, y, bg, amp, peak):
    """Sigma seed from the full width at half maximum of the contiguous
    run around the peak bin (stray bins elsewhere must not widen it)."""
    spacing = float(x[1] - x[0]) if len(x) > 1 else 1.0
    if amp <= 0:
        return spacing
    half = bg + 0.5 * amp
    i = j = peak
    while i > 0 and y[i - 1] >= half:
        i -= 1
    while j < len(y) - 1 and y[j + 1] >= half:
        j += 1
    fwhm = float(x[j] - x[i]) + spacing
    return max(fwhm / 2.355, spacing / 2.355, 1e-9)


# ---------------------------------------------------------------------------
# public API

def fit_gaussian(hist: DeltaHistogram,
                 init: tuple[float, float, float, float] | None = None,
                 center_bounds: tuple[float, float] | None = None) -> GaussianFit:
    """Fit one Gaussian peak on a flat background.

    ``init`` overrides the automatic (bg, amplitude, center, sigma) seed;
    ``center_bounds`` boxes the peak position, which stabilizes fits when
    the expected location is known.
    """
    x, y, weights = _fit_arrays(hist)
    return fit_peak(x, y, weights=weights, init=init, center_bounds=center_bounds)


def fit_peak(x, y, *, weights=None, init=None,
             center_bounds: tuple[float, float] | None = None) -> GaussianFit:
    """Core single-peak fit on plain arrays (histogram-free entry point)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 10:
        raise ValueError("need at least 10 bins to fit a peak")
    if weights is None:
        weights = 1.0 / np.maximum(y, 1.0)
    weights = np.asarray(weights, dtype=np.float64)

    if np.ptp(y) == 0.0:
        return _flat_result(x, y, weights)

    p0 = np.array(init, dtype=np.float64) if init is not None \
        else _single_peak_seed(x, y)
    lower = np.array([-np.inf, -np.inf, -np.inf, 1e-9])
    upper = np.full(4, np.inf)
    if center_bounds is not None:
        lower[2], upper[2] = center_bounds
        p0[2] = np.clip(p0[2], lower[2], upper[2])

    p, cov, chi2, it = _levmar(x, y, weights, gauss_model, gauss_jacobian,
                               p0, lower=lower, upper=upper)
    bg, amp, mu, sigma = p
    errs = np.sqrt(np.maximum(np.diag(cov), 0.0))
    contrast, contrast_err = _contrast_and_error(amp, bg, cov, 1, 0)
    significant = _is_significant(amp, errs[1], bg, errs[0],
                                  contrast, contrast_err)
    return GaussianFit(
        bg=float(bg), amplitude=float(amp), center_ps=float(mu),
        sigma_ps=float(abs(sigma)),
        bg_err=float(errs[0]), amplitude_err=float(errs[1]),
        center_err_ps=float(errs[2]), sigma_err_ps=float(errs[3]),
        contrast=float(contrast), contrast_err=float(contrast_err),
        significant=significant, chi2=float(chi2), dof=len(x) - 4,
        n_iterations=it, covariance=cov)


def _flat_result(x, y, weights):
    """Exactly flat data: no peak by construction, never an error."""
    bg = float(y[0])
    if bg <= 0.0:
        raise FitError("histogram is empty; nothing to fit")
    spacing = float(x[1] - x[0])
    bg_err = float(1.0 / np.sqrt(weights.sum()))
    cov = np.full((4, 4), np.inf)
    cov[0, 0] = bg_err**2
    cov[1, 1] = bg_err**2
    cov[0, 1] = cov[1, 0] = 0.0
    return GaussianFit(
        bg=bg, amplitude=0.0, center_ps=float(x[len(x) // 2]),
        sigma_ps=spacing, bg_err=bg_err, amplitude_err=bg_err,
        center_err_ps=np.inf, sigma_err_ps=np.inf,
        contrast=0.0, contrast_err=bg_err / bg, significant=False,
        chi2=0.0, dof=len(x) - 4, n_iterations=0, covariance=cov)


def fit_two_peaks(hist: DeltaHistogram,
                  separation_hint_ps: float) -> TwoPeakFit:
    """Joint fit of two Gaussians with a shared flat background.

    ``separation_hint_ps`` seeds the search for the second peak at the
    expected distance from the dominant one (for example the optical
    fiber delay between detection arms).  Peaks closer than twice the sum
    of their widths cannot be labeled reliably and raise ``FitError``
    ("merged peaks"); a second amplitude consistent with zero is returned
    flagged, not raised.
    """
    if separation_hint_ps <= 0:
        raise ValueError("separation hint must be positive")
    x, y, weights = _fit_arrays(hist)
    if len(x) < 14:
        raise ValueError("need at least 14 bins to fit two peaks")
    if np.ptp(y) == 0.0:
        raise FitError("histogram is flat; no peaks to fit")

    bg0, a1, mu1, s1 = _single_peak_seed(x, y)
    resid = y - gauss_model(x, np.array([bg0, a1, mu1, s1]))
    mu2, a2 = _second_peak_seed(x, resid, mu1, separation_hint_ps)
    p0 = np.array([bg0, a1, mu1, s1, max(a2, 0.05 * a1), mu2, s1])

    lower = np.array([-np.inf, -np.inf, -np.inf, 1e-9, -np.inf, -np.inf, 1e-9])
    upper = np.full(7, np.inf)
    # Box the second center near the hinted side: without any real second
    # peak the (mu2, sigma2) directions are flat and an unbounded center
    # wanders instead of converging.
    side = 1.0 if mu2 >= mu1 else -1.0
    target = mu1 + side * separation_hint_ps
    lower[5] = target - 0.6 * separation_hint_ps
    upper[5] = target + 0.6 * separation_hint_ps
    p, cov, chi2, it = _levmar(x, y, weights, two_gauss_model,
                               two_gauss_jacobian, p0, lower=lower, upper=upper)

    errs = np.sqrt(np.maximum(np.diag(cov), 0.0))
    comps = []
    for k in (0, 1):
        i = 1 + 3 * k
        contrast, contrast_err = _contrast_and_error(p[i], p[0], cov, i, 0)
        amp_err = errs[i]
        significant = _is_significant(p[i], amp_err, p[0], errs[0],
                                      contrast, contrast_err)
        comps.append((PeakComponent(
            amplitude=float(p[i]), center_ps=float(p[i + 1]),
            sigma_ps=float(abs(p[i + 2])), amplitude_err=float(amp_err),
            center_err_ps=float(errs[i + 1]), sigma_err_ps=float(errs[i + 2]),
            contrast=float(contrast), contrast_err=float(contrast_err),
            significant=significant), i))

    comps.sort(key=lambda ci: abs(ci[0].center_ps))
    (near, i_near), (far, i_far) = comps

    if near.significant and far.significant:
        gap = abs(far.center_ps - near.center_ps)
        if gap <= 2.0 * (near.sigma_ps + far.sigma_ps):
            raise FitError("merged peaks: separation below resolvability bound",
                           last_estimate=p)

    cells = (cov[i_near + 1, i_near + 1], cov[i_far + 1, i_far + 1],
             cov[i_near + 1, i_far + 1])
    if all(np.isfinite(c) for c in cells):
        var_sep = cells[0] + cells[1] - 2.0 * cells[2]
        sep_err = float(np.sqrt(max(var_sep, 0.0)))
    else:
        sep_err = np.inf
    return TwoPeakFit(
        bg=float(p[0]), bg_err=float(errs[0]), near=near, far=far,
        separation_ps=float(far.center_ps - near.center_ps),
        separation_err_ps=sep_err,
        chi2=float(chi2), dof=len(x) - 7, n_iterations=it, covariance=cov)


def _second_peak_seed(x, resid, mu1, hint):
    """Look for the second peak near mu1 +- hint, wider side wins."""
    best_mu, best_amp = mu1 + hint, 0.0
    for sign in (+1.0, -1.0):
        target = mu1 + sign * hint
        window = np.abs(x - target) <= 0.5 * hint
        if not window.any():
            continue
        k = int(np.argmax(np.where(window, resid, -np.inf)))
        if resid[k] > best_amp:
            best_mu, best_amp = float(x[k]), float(resid[k])
    return best_mu, best_amp
