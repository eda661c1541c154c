"""Delay-discounting hierarchy: a hyperbolic value curve with subject-level
psi = ln k and ln phi effects, fitted by Metropolis within Gibbs twice over,
once with the boundary-tolerant likelihood and once with a normal likelihood
as the conventional baseline.

The group layers are conjugate (normal mean, inverse-gamma variance), so
they move by exact Gibbs draws; the subject-level parameters move by
random-walk proposals whose variance is half the current group variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import optimize as _opt
from scipy.special import expit

from .bayes_hier_linear import PosteriorSummary
from .data import TabularDataset
from .distributions import DEFAULT_L, DEFAULT_S, sltb_logpdf_arrays
from .errors import NumericalError, ValidationError
from .kernel import Rng

_PSI_GRID = np.linspace(-12.0, 2.0, 29)
_LNPHI_LIMIT = 50.0


@dataclass(frozen=True)
class HyperPriors:
    """Group-layer hyperparameters; the IG priors are IG(a/2, b/2)."""
    mu_psi0: float = -1.0
    lam2_psi0: float = 100.0
    a1: float = 1.0
    b1: float = 0.1
    mu_phi0: float = 1.0
    lam2_phi0: float = 100.0
    a2: float = 1.0
    b2: float = 0.1

    def __post_init__(self):
        if min(self.lam2_psi0, self.a1, self.b1,
               self.lam2_phi0, self.a2, self.b2) <= 0:
            raise ValidationError(
                "prior variances and IG parameters must be positive")


HYPER = HyperPriors()

DEFAULT_DELAYS = (1.0, 7.0, 30.0, 182.0, 365.0, 1825.0)


@dataclass(frozen=True)
class DiscountTruth:
    """Group-layer generating values for the simulation study.

    The log-precision layer is centered low on purpose: noisy responses
    are what separate the two likelihoods, since the normal baseline
    then has to absorb the strongly heteroskedastic beta noise into a
    single residual variance.
    """
    mu_psi: float = -4.87
    sigma2_psi: float = 2.48
    mu_lnphi: float = 1.0
    sigma2_lnphi: float = 0.5

    def __post_init__(self):
        if self.sigma2_psi <= 0 or self.sigma2_lnphi <= 0:
            raise ValidationError("truth variances must be positive")


@dataclass(frozen=True)
class DiscountData:
    """Indifference points, one row per subject, one column per delay."""
    y: np.ndarray
    delays: Tuple[float, ...]
    subject_ids: Tuple[str, ...]

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delays",
                           tuple(float(d) for d in self.delays))
        if y.ndim != 2:
            raise ValidationError("y must be a subjects-by-delays matrix")
        if y.shape != (len(self.subject_ids), len(self.delays)):
            raise ValidationError("y shape must match subjects and delays")
        d = np.asarray(self.delays)
        if d.size and (np.any(d <= 0) or np.any(np.diff(d) <= 0)):
            raise ValidationError("delays must be positive, strictly increasing")
        if y.size and (not np.all(np.isfinite(y))
                       or np.any((y < 0.0) | (y > 1.0))):
            raise ValidationError("responses must lie in [0, 1]")

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_delays(self) -> int:
        return len(self.delays)

    def to_table(self) -> TabularDataset:
        i, j = np.meshgrid(np.arange(self.n_subjects),
                           np.arange(self.n_delays), indexing="ij")
        return TabularDataset({
            "subject": tuple(self.subject_ids[k] for k in i.ravel()),
            "delay": np.asarray(self.delays)[j.ravel()],
            "y": self.y.ravel()})


def discount_data_from_table(data: TabularDataset) -> DiscountData:
    """Pivot a long subject/delay/y table into the balanced matrix form."""
    for col in ("subject", "delay", "y"):
        if not data.has_column(col):
            raise ValidationError(f"missing column '{col}'")
    subj = (data.factor("subject") if data.is_factor("subject")
            else tuple(str(float(v)) for v in data.numeric("subject")))
    delay = data.numeric("delay")
    y = data.numeric("y")
    ids = tuple(sorted(set(subj)))
    dvals = tuple(sorted(set(float(d) for d in delay)))
    mat = np.full((len(ids), len(dvals)), np.nan)
    si = {v: k for k, v in enumerate(ids)}
    di = {v: k for k, v in enumerate(dvals)}
    for sv, dv, yv in zip(subj, delay, y):
        mat[si[sv], di[float(dv)]] = yv
    if np.any(np.isnan(mat)):
        raise ValidationError("every subject needs a y at every delay")
    return DiscountData(y=mat, delays=dvals, subject_ids=ids)


def discount_mean(psi, D):
    """Subjective value 1/(1 + exp(psi) * D), computed on the logit scale."""
    D = np.asarray(D, dtype=float)
    if np.any(D <= 0):
        raise ValidationError("delays must be positive")
    return expit(-(np.asarray(psi, dtype=float) + np.log(D)))


@dataclass(frozen=True)
class DiscountSample:
    """Generated dataset plus the latent values that produced it."""
    data: DiscountData
    psi: np.ndarray = field(repr=False)
    ln_phi: np.ndarray = field(repr=False)
    truth: DiscountTruth = DiscountTruth()


def gen_discount_data(nsubj: int = 100,
                      delays: Tuple[float, ...] = DEFAULT_DELAYS,
                      truth: DiscountTruth = DiscountTruth(),
                      seed: int = 0,
                      rounding_decimals: Optional[int] = None) -> DiscountSample:
    """Draw subjects from the group layers, then beta responses around the
    hyperbolic curve.

    The default leaves the draws continuous, so both samplers fit data
    whose true law is exactly the beta around the curve. Rounding (e.g.
    to 2 decimals, the resolution of a typical indifference-point task)
    collapses near-boundary cells onto exact 0s and 1s.
    """
    if nsubj < 2:
        raise ValidationError("need at least two subjects")
    if len(delays) < 3:
        raise ValidationError("need at least three delays")
    rng = Rng(seed)
    psi = np.asarray(rng.normal(truth.mu_psi, np.sqrt(truth.sigma2_psi), nsubj))
    ln_phi = np.asarray(
        rng.normal(truth.mu_lnphi, np.sqrt(truth.sigma2_lnphi), nsubj))
    phi = np.exp(ln_phi)[:, None]
    mu = discount_mean(psi[:, None], np.asarray(delays)[None, :])
    y = np.asarray(rng.beta(mu * phi, (1.0 - mu) * phi))
    if rounding_decimals is not None:
        y = np.round(y, rounding_decimals)
    data = DiscountData(
        y=y, delays=tuple(delays),
        subject_ids=tuple(f"s{i + 1:03d}" for i in range(nsubj)))
    return DiscountSample(data=data, psi=psi, ln_phi=ln_phi, truth=truth)


# ---------------------------------------------------------------------------
# conditional building blocks
# ---------------------------------------------------------------------------

def normal_conditional(values_sum: float, n: int, sigma2: float,
                       mu0: float, lam2_0: float) -> Tuple[float, float]:
    """Posterior (mean, variance) of a normal mean with known variance."""
    lam_m = 1.0 / (n / sigma2 + 1.0 / lam2_0)
    mu_m = (values_sum / sigma2 + mu0 / lam2_0) * lam_m
    return mu_m, lam_m


def ig_shape_rate(n: int, sq_sum: float, a: float, b: float) -> Tuple[float, float]:
    """Inverse-gamma conditional parameters ((n + a)/2, (sq_sum + b)/2)."""
    return (n + a) / 2.0, (sq_sum + b) / 2.0


def sample_inverse_gamma(rng: Rng, shape: float, rate: float) -> float:
    """IG(shape, rate) via the reciprocal of a gamma draw."""
    if not (shape > 0 and rate > 0):
        raise NumericalError(
            f"inverse-gamma needs positive parameters, got ({shape}, {rate})")
    g = float(rng.gamma(shape, 1.0 / rate))
    while g == 0.0:  # guard: underflow would divide by zero
        g = float(rng.gamma(shape, 1.0 / rate))
    return 1.0 / g


def gibbs_mu(rng: Rng, values: np.ndarray, sigma2: float,
             mu0: float, lam2_0: float) -> float:
    mu_m, lam_m = normal_conditional(
        float(np.sum(values)), len(values), sigma2, mu0, lam2_0)
    return float(rng.normal(mu_m, np.sqrt(lam_m)))


def gibbs_sigma2(rng: Rng, values: np.ndarray, mu: float,
                 a: float, b: float) -> float:
    shape, rate = ig_shape_rate(
        len(values), float(np.sum((values - mu) ** 2)), a, b)
    return sample_inverse_gamma(rng, shape, rate)


def sltb_subject_logliks(psi: np.ndarray, ln_phi: np.ndarray,
                          data: DiscountData, s: float, l: float) -> np.ndarray:
    """Per-subject log-likelihood sums; -inf rows mark unusable parameters."""
    if data.n_delays == 0:
        return np.zeros(data.n_subjects)
    out = np.full(data.n_subjects, -np.inf)
    usable = np.abs(ln_phi) <= _LNPHI_LIMIT
    mu = discount_mean(psi[:, None], np.asarray(data.delays)[None, :])
    usable &= ((mu > 0.0) & (mu < 1.0)).all(axis=1)
    if not usable.any():
        return out
    rows = sltb_logpdf_arrays(
        mu[usable], np.exp(ln_phi[usable])[:, None], s, l, data.y[usable])
    out[usable] = rows.sum(axis=1)
    return out


def normal_subject_logliks(psi: np.ndarray, sigma2: float,
                            data: DiscountData) -> np.ndarray:
    if data.n_delays == 0:
        return np.zeros(data.n_subjects)
    mu = discount_mean(psi[:, None], np.asarray(data.delays)[None, :])
    resid = data.y - mu
    return (-0.5 * data.n_delays * np.log(2.0 * np.pi * sigma2)
            - (resid ** 2).sum(axis=1) / (2.0 * sigma2))


def mh_update_psi_sltb(rng: Rng, psi: np.ndarray, ln_phi: np.ndarray,
                       data: DiscountData, mu_psi: float, sigma2_psi: float,
                       s: float = DEFAULT_S, l: float = DEFAULT_L,
                       cur_lik: Optional[np.ndarray] = None
                       ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One random-walk sweep over every subject's psi.

    Returns (new psi, new per-subject likelihoods, accept mask). The
    proposal variance is half the group variance.
    """
    if cur_lik is None:
        cur_lik = sltb_subject_logliks(psi, ln_phi, data, s, l)
    step = np.asarray(rng.normal(0.0, 1.0, len(psi))) * np.sqrt(0.5 * sigma2_psi)
    prop = psi + step
    new_lik = sltb_subject_logliks(prop, ln_phi, data, s, l)
    log_r = (new_lik - cur_lik
             + ((psi - mu_psi) ** 2 - (prop - mu_psi) ** 2) / (2.0 * sigma2_psi))
    with np.errstate(invalid="ignore"):
        accept = np.log(np.asarray(rng.uniform(size=len(psi)))) < log_r
    out = np.where(accept, prop, psi)
    lik = np.where(accept, new_lik, cur_lik)
    return out, lik, accept


def mh_update_lnphi_sltb(rng: Rng, psi: np.ndarray, ln_phi: np.ndarray,
                         data: DiscountData, mu_phi: float, sigma2_phi: float,
                         s: float = DEFAULT_S, l: float = DEFAULT_L,
                         cur_lik: Optional[np.ndarray] = None
                         ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mirror sweep for the per-subject log-precisions."""
    if cur_lik is None:
        cur_lik = sltb_subject_logliks(psi, ln_phi, data, s, l)
    step = np.asarray(rng.normal(0.0, 1.0, len(ln_phi))) * np.sqrt(0.5 * sigma2_phi)
    prop = ln_phi + step
    new_lik = sltb_subject_logliks(psi, prop, data, s, l)
    log_r = (new_lik - cur_lik
             + ((ln_phi - mu_phi) ** 2 - (prop - mu_phi) ** 2)
             / (2.0 * sigma2_phi))
    with np.errstate(invalid="ignore"):
        accept = np.log(np.asarray(rng.uniform(size=len(ln_phi)))) < log_r
    out = np.where(accept, prop, ln_phi)
    lik = np.where(accept, new_lik, cur_lik)
    return out, lik, accept


def mh_update_psi_normal(rng: Rng, psi: np.ndarray, sigma2: float,
                         data: DiscountData, mu_psi: float, sigma2_psi: float,
                         cur_lik: Optional[np.ndarray] = None
                         ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Subject sweep under the normal residual likelihood."""
    if cur_lik is None:
        cur_lik = normal_subject_logliks(psi, sigma2, data)
    step = np.asarray(rng.normal(0.0, 1.0, len(psi))) * np.sqrt(0.5 * sigma2_psi)
    prop = psi + step
    new_lik = normal_subject_logliks(prop, sigma2, data)
    log_r = (new_lik - cur_lik
             + ((psi - mu_psi) ** 2 - (prop - mu_psi) ** 2) / (2.0 * sigma2_psi))
    accept = np.log(np.asarray(rng.uniform(size=len(psi)))) < log_r
    out = np.where(accept, prop, psi)
    lik = np.where(accept, new_lik, cur_lik)
    return out, lik, accept


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NonlinearChainState:
    psi: np.ndarray
    ln_phi: np.ndarray
    mu_psi: float
    sigma2_psi: float
    mu_phi: float
    sigma2_phi: float
    resid_sigma2: float

    def __post_init__(self):
        if min(self.sigma2_psi, self.sigma2_phi, self.resid_sigma2) <= 0:
            raise ValidationError("variances must be positive")


def _subject_nll(theta: np.ndarray, y: np.ndarray, delays: np.ndarray,
                 s: float, l: float) -> float:
    psi, ln_phi = theta
    if abs(ln_phi) > _LNPHI_LIMIT:
        return np.inf
    mu = discount_mean(psi, delays)
    if np.any((mu <= 0.0) | (mu >= 1.0)):
        return np.inf
    rows = sltb_logpdf_arrays(mu, np.exp(ln_phi), s, l, y)
    total = float(rows.sum())
    return -total if np.isfinite(total) else np.inf


def _subject_mle(y: np.ndarray, delays: np.ndarray,
                 s: float, l: float) -> Tuple[float, float]:
    """Two-parameter fit for one subject, grid-seeded; the grid value is
    the fallback when the simplex fails."""
    ln_phi0 = np.log(10.0)
    nlls = [_subject_nll(np.array([p, ln_phi0]), y, delays, s, l)
            for p in _PSI_GRID]
    best = _PSI_GRID[int(np.argmin(nlls))]
    res = _opt.minimize(
        _subject_nll, np.array([best, ln_phi0]), args=(y, delays, s, l),
        method="Nelder-Mead",
        options={"maxiter": 400, "xatol": 1e-6, "fatol": 1e-9})
    if res.success and np.all(np.isfinite(res.x)) and np.isfinite(res.fun):
        return float(res.x[0]), float(res.x[1])
    return float(best), ln_phi0


def initialize_chain(data: DiscountData, rng: Optional[Rng] = None,
                     s: float = DEFAULT_S, l: float = DEFAULT_L
                     ) -> NonlinearChainState:
    """Empirical start: per-subject fits set the location of every layer."""
    if data.n_subjects < 1 or data.n_delays < 1:
        raise ValidationError("initialization needs at least one observation")
    rng = rng if rng is not None else Rng(0)
    delays = np.asarray(data.delays)
    fits = np.array([_subject_mle(data.y[i], delays, s, l)
                     for i in range(data.n_subjects)])
    psi_hat, ln_phi_hat = fits[:, 0], fits[:, 1]
    sd_psi = max(float(np.std(psi_hat)), 1e-8)
    sd_phi = max(float(np.std(ln_phi_hat)), 1e-8)
    psi0 = np.asarray(rng.normal(float(np.mean(psi_hat)), sd_psi,
                                 data.n_subjects))
    ln_phi0 = np.asarray(rng.normal(float(np.mean(ln_phi_hat)), sd_phi,
                                    data.n_subjects))
    return NonlinearChainState(
        psi=psi0, ln_phi=ln_phi0,
        mu_psi=float(np.mean(psi_hat)), sigma2_psi=100.0,
        mu_phi=float(np.mean(ln_phi_hat)), sigma2_phi=100.0,
        resid_sigma2=100.0)


# ---------------------------------------------------------------------------
# full samplers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NonlinearResult:
    summary: PosteriorSummary
    columns: Tuple[str, ...]
    draws: np.ndarray = field(repr=False)


def _summarize(cols, draws, rates, warn_low=0.05, warn_high=0.95):
    q = np.quantile(draws, [0.25, 0.5, 0.75, 0.025, 0.975], axis=0)
    warns = tuple(
        f"block {name}: acceptance rate {r:.3f} outside [{warn_low}, {warn_high}]"
        for name, r in rates.items() if not warn_low <= r <= warn_high)
    return PosteriorSummary(
        names=cols, mean=draws.mean(axis=0), q1=q[0], median=q[1], q3=q[2],
        q025=q[3], q975=q[4], acceptance_rates=rates, n_draws=draws.shape[0],
        warnings=warns)


def sltb_hier_sample(data: DiscountData, priors: HyperPriors = HYPER,
                     iters: int = 20000, burnin: int = 5000, seed: int = 0,
                     thin: int = 5, s: float = DEFAULT_S,
                     l: float = DEFAULT_L) -> NonlinearResult:
    """Six-block sweep: Gibbs on the two group layers, random-walk MH on
    the subject layers, with the boundary-tolerant response likelihood."""
    if iters <= burnin:
        raise ValidationError("iters must exceed burnin")
    if burnin < 0 or thin < 1:
        raise ValidationError("burnin must be >= 0 and thin >= 1")
    rng = Rng(seed)
    state = initialize_chain(data, rng, s, l)
    psi, ln_phi = state.psi.copy(), state.ln_phi.copy()
    mu_psi, sigma2_psi = state.mu_psi, state.sigma2_psi
    mu_phi, sigma2_phi = state.mu_phi, state.sigma2_phi
    n = data.n_subjects

    lik = sltb_subject_logliks(psi, ln_phi, data, s, l)
    if not np.all(np.isfinite(lik)):
        bad = data.subject_ids[int(np.argmin(np.isfinite(lik)))]
        raise NumericalError(
            f"non-finite starting log-likelihood for subject {bad}")
    cols = ("mu_psi", "sigma2_psi", "mu_phi", "sigma2_phi",
            *(f"psi_{sid}" for sid in data.subject_ids),
            *(f"ln_phi_{sid}" for sid in data.subject_ids))
    kept = []
    acc_psi = acc_phi = prop = 0
    for it in range(1, iters + 1):
        mu_psi = gibbs_mu(rng, psi, sigma2_psi, priors.mu_psi0,
                          priors.lam2_psi0)
        sigma2_psi = gibbs_sigma2(rng, psi, mu_psi, priors.a1, priors.b1)
        psi, lik, a1 = mh_update_psi_sltb(
            rng, psi, ln_phi, data, mu_psi, sigma2_psi, s, l, cur_lik=lik)
        mu_phi = gibbs_mu(rng, ln_phi, sigma2_phi, priors.mu_phi0,
                          priors.lam2_phi0)
        sigma2_phi = gibbs_sigma2(rng, ln_phi, mu_phi, priors.a2, priors.b2)
        ln_phi, lik, a2 = mh_update_lnphi_sltb(
            rng, psi, ln_phi, data, mu_phi, sigma2_phi, s, l, cur_lik=lik)
        if it > burnin:
            acc_psi += int(a1.sum())
            acc_phi += int(a2.sum())
            prop += n
            if (it - burnin) % thin == 0:
                kept.append(np.concatenate(
                    [[mu_psi, sigma2_psi, mu_phi, sigma2_phi], psi, ln_phi]))
    draws = np.asarray(kept)
    rates = {"psi": acc_psi / prop, "ln_phi": acc_phi / prop}
    return NonlinearResult(summary=_summarize(cols, draws, rates),
                           columns=cols, draws=draws)


def normal_hier_sample(data: DiscountData, priors: HyperPriors = HYPER,
                       iters: int = 20000, burnin: int = 5000, seed: int = 0,
                       thin: int = 5) -> NonlinearResult:
    """Baseline with the same psi hierarchy but normal residuals; the
    residual variance has its own inverse-gamma Gibbs step."""
    if iters <= burnin:
        raise ValidationError("iters must exceed burnin")
    if burnin < 0 or thin < 1:
        raise ValidationError("burnin must be >= 0 and thin >= 1")
    if data.n_delays == 0:
        raise ValidationError("the normal sampler needs observations")
    rng = Rng(seed)
    state = initialize_chain(data, rng)
    psi = state.psi.copy()
    mu_psi, sigma2_psi = state.mu_psi, state.sigma2_psi
    sigma2 = state.resid_sigma2
    n, j = data.n_subjects, data.n_delays
    delays = np.asarray(data.delays)

    cols = ("mu_psi", "sigma2_psi", "sigma2",
            *(f"psi_{sid}" for sid in data.subject_ids))
    kept = []
    acc = prop = 0
    for it in range(1, iters + 1):
        mu_psi = gibbs_mu(rng, psi, sigma2_psi, priors.mu_psi0,
                          priors.lam2_psi0)
        sigma2_psi = gibbs_sigma2(rng, psi, mu_psi, priors.a1, priors.b1)
        resid = data.y - discount_mean(psi[:, None], delays[None, :])
        shape, rate = ig_shape_rate(n * j, float((resid ** 2).sum()),
                                    priors.a2, priors.b2)
        sigma2 = sample_inverse_gamma(rng, shape, rate)
        psi, _, a = mh_update_psi_normal(
            rng, psi, sigma2, data, mu_psi, sigma2_psi)
        if it > burnin:
            acc += int(a.sum())
            prop += n
            if (it - burnin) % thin == 0:
                kept.append(np.concatenate([[mu_psi, sigma2_psi, sigma2], psi]))
    draws = np.asarray(kept)
    rates = {"psi": acc / prop}
    return NonlinearResult(summary=_summarize(cols, draws, rates),
                           columns=cols, draws=draws)
