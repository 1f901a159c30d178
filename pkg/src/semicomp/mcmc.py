"""Metropolis-within-Gibbs sampler for the Weibull / MVN illness-death model.

One sweep updates, in this fixed order, the frailties (exact Gamma draw),
``beta_1..3`` (block random walk), ``(log alpha_g, log kappa_g)`` for
g = 1..3 (joint random walk), the hospital effects ``V_j`` (3-d random walk
per hospital), ``Sigma_V`` (exact inverse-Wishart draw) and ``theta``
(random walk on ``log theta``).

Proposal scales are tuned by Robbins-Monro during burn-in only (target
acceptance 0.44 for scalar blocks, 0.23 otherwise) and block proposal
covariances are re-estimated from burn-in draws; everything is frozen once
burn-in ends so the retained chain is a time-homogeneous Markov chain.

The hospital effects are conditionally independent across hospitals given
the other parameters, so the per-hospital updates are carried out as one
vectorized pass; this has the same transition kernel as visiting them one by
one.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from . import _npz
from .exceptions import ConfigError, NumericalError
from .model import CLOCKS, Dataset, ModelState, TransitionParams, TransitionRows

CHECKPOINT_VERSION = 1
BLOCKS = ("beta1", "beta2", "beta3", "weibull1", "weibull2", "weibull3", "V", "theta")


@dataclass
class Priors:
    """Prior hyperparameters.

    ``beta_g ~ N(0, beta_var I)``; ``log alpha_g, log kappa_g ~ N(0, weibull_var)``;
    ``Sigma_V ~ InvWishart(psi0, nu0)``; ``1/theta ~ Gamma(theta_shape, rate=theta_rate)``.
    """

    beta_var: float = 100.0
    weibull_var: float = 100.0
    psi0: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    nu0: float = 7.0
    theta_shape: float = 0.7
    theta_rate: float = 0.7

    @property
    def psi0_matrix(self):
        return np.asarray(self.psi0, dtype=float)


@dataclass
class McmcConfig:
    n_iter: int = 5000
    burnin: int = 1000
    thin: int = 5
    h3_clock: str = "semi_markov"
    frailty: bool = True
    priors: Priors = field(default_factory=Priors)
    # multipliers on the default (preconditioned) proposal scales
    scale_beta: float = 1.0
    scale_weibull: float = 1.0
    scale_V: float = 1.0
    scale_theta: float = 1.0
    adapt: bool = True
    seed: int = 0

    def validate(self):
        if not self.n_iter > self.burnin >= 0:
            raise ConfigError("need n_iter > burnin >= 0")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if min(self.scale_beta, self.scale_weibull, self.scale_V, self.scale_theta) < 0:
            raise ConfigError("proposal scales must be non-negative")
        if self.h3_clock not in CLOCKS:
            raise ConfigError(f"h3_clock must be one of {CLOCKS}")
        p = self.priors
        if not p.nu0 > 4:
            raise ConfigError("nu0 must exceed 4 for a finite prior mean of Sigma_V")
        if min(p.beta_var, p.weibull_var, p.theta_shape, p.theta_rate) <= 0:
            raise ConfigError("prior variances and Gamma parameters must be positive")
        try:
            np.linalg.cholesky(p.psi0_matrix)
        except np.linalg.LinAlgError:
            raise ConfigError("psi0 must be positive definite") from None
        return self

    @property
    def n_samples(self):
        return (self.n_iter - self.burnin) // self.thin


class PosteriorSamples:
    """Thinned post-burn-in draws plus the per-sample per-patient log-likelihood."""

    def __init__(self, alpha, kappa, beta, V, sigma_V, theta, gamma, loglik, h3_clock,
                 acceptance=None):
        self.alpha = np.asarray(alpha, dtype=float)
        self.kappa = np.asarray(kappa, dtype=float)
        self.beta = [np.asarray(b, dtype=float) for b in beta]
        self.V = np.asarray(V, dtype=float)
        self.sigma_V = np.asarray(sigma_V, dtype=float)
        self.theta = np.asarray(theta, dtype=float)
        self.gamma = np.asarray(gamma, dtype=float)
        self.loglik = np.asarray(loglik, dtype=float)
        self.h3_clock = h3_clock
        self.acceptance = dict(acceptance or {})

    @classmethod
    def allocate(cls, M, N, J, p, h3_clock):
        return cls(np.zeros((M, 3)), np.zeros((M, 3)), [np.zeros((M, k)) for k in p],
                   np.zeros((M, J, 3)), np.zeros((M, 3, 3)), np.zeros(M), np.zeros((M, N)),
                   np.zeros((M, N)), h3_clock)

    def __len__(self):
        return self.alpha.shape[0]

    def state(self, m) -> ModelState:
        trans = tuple(TransitionParams(self.alpha[m, g], self.kappa[m, g], self.beta[g][m])
                      for g in range(3))
        return ModelState(trans, self.V[m], self.sigma_V[m], float(self.theta[m]), self.gamma[m],
                          self.h3_clock)

    def states(self):
        return [self.state(m) for m in range(len(self))]

    def mean_state(self) -> ModelState:
        trans = tuple(TransitionParams(self.alpha[:, g].mean(), self.kappa[:, g].mean(),
                                       self.beta[g].mean(axis=0)) for g in range(3))
        return ModelState(trans, self.V.mean(axis=0), self.sigma_V.mean(axis=0),
                          float(self.theta.mean()), self.gamma.mean(axis=0), self.h3_clock)

    def store(self, m, state: ModelState, loglik):
        self.alpha[m] = state.alpha
        self.kappa[m] = state.kappa
        for g in range(3):
            self.beta[g][m] = state.trans[g].beta
        self.V[m] = state.V
        self.sigma_V[m] = state.sigma_V
        self.theta[m] = state.theta
        self.gamma[m] = state.gamma
        self.loglik[m] = loglik

    def arrays(self, prefix=""):
        out = {f"{prefix}alpha": self.alpha, f"{prefix}kappa": self.kappa, f"{prefix}V": self.V,
               f"{prefix}sigma_V": self.sigma_V, f"{prefix}theta": self.theta,
               f"{prefix}gamma": self.gamma, f"{prefix}loglik": self.loglik}
        for g in range(3):
            out[f"{prefix}beta{g + 1}"] = self.beta[g]
        return out

    @classmethod
    def from_arrays(cls, arrs, h3_clock, acceptance=None, prefix=""):
        return cls(arrs[f"{prefix}alpha"], arrs[f"{prefix}kappa"],
                   [arrs[f"{prefix}beta{g}"] for g in (1, 2, 3)], arrs[f"{prefix}V"],
                   arrs[f"{prefix}sigma_V"], arrs[f"{prefix}theta"], arrs[f"{prefix}gamma"],
                   arrs[f"{prefix}loglik"], h3_clock, acceptance)

    def save(self, path):
        header = {"format": "semicomp-posterior", "version": CHECKPOINT_VERSION,
                  "h3_clock": self.h3_clock, "acceptance": self.acceptance}
        _npz.savez(path, header=np.array(json.dumps(header, sort_keys=True)), **self.arrays())

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as f:
            header = json.loads(str(f["header"]))
            arrs = {k: f[k] for k in f.files if k != "header"}
        return cls.from_arrays(arrs, header["h3_clock"], header["acceptance"])

    def equals(self, other):
        a, b = self.arrays(), other.arrays()
        return (self.h3_clock == other.h3_clock and a.keys() == b.keys()
                and all(np.array_equal(a[k], b[k]) for k in a))


def _chol_or_zero(C):
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        return np.diag(np.sqrt(np.maximum(np.diag(C), 0.0)))


class GibbsSampler:
    """Stateful Metropolis-within-Gibbs chain.

    Parameters
    ----------
    dataset : Dataset
    config : McmcConfig
    state : ModelState, optional
        Starting values; defaults to ``ModelState.initial``.
    """

    def __init__(self, dataset: Dataset, config: McmcConfig, state: Optional[ModelState] = None):
        self.config = config.validate()
        self.dataset = dataset
        self.rows = TransitionRows(dataset, config.h3_clock)
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        if state is None:
            state = ModelState.initial(dataset, config.h3_clock, config.frailty)
        if state.h3_clock != config.h3_clock:
            raise ConfigError("state and config disagree on the h3 clock")
        self.N, self.J = dataset.n_patients, dataset.n_hospitals
        self.p = [x.shape[1] for x in dataset.X]
        self._load_state(state)

        pri = config.priors
        self.psi0 = pri.psi0_matrix
        # hospital-level event counts per transition
        self.D = np.column_stack([np.bincount(self.rows.hospital[g], weights=self.rows.event[g],
                                              minlength=self.J) for g in range(3)]) \
            if self.J else np.zeros((0, 3))
        self.iteration = 0
        self._init_proposals()
        self.n_prop = dict.fromkeys(BLOCKS, 0)
        self.n_acc = dict.fromkeys(BLOCKS, 0)
        self.n_nonfinite = dict.fromkeys(BLOCKS, 0)
        self._burn_draws = {b: [] for b in BLOCKS if b != "V"}

    # -- state handling --------------------------------------------------------

    def _load_state(self, state: ModelState):
        self.log_alpha = np.log(state.alpha)
        self.log_kappa = np.log(state.kappa)
        self.beta = [b.copy() for b in state.beta]
        self.V = state.V.copy()
        self.sigma_V = state.sigma_V.copy()
        self.theta = float(state.theta)
        self.gamma = state.gamma.copy() if self.config.frailty else np.ones(self.N)
        self._refresh()

    def _refresh(self):
        rows = self.rows
        self.log_h0, self.dH0, self.xb = [], [], []
        for g in range(3):
            lh, dh = rows.baseline(g + 1, np.exp(self.log_alpha[g]), np.exp(self.log_kappa[g]))
            self.log_h0.append(lh)
            self.dH0.append(dh)
            self.xb.append(rows.X[g] @ self.beta[g])
        self._gamma_stats()

    def _gamma_stats(self):
        with np.errstate(divide="ignore"):
            self.sum_log_gamma = float(np.sum(np.log(self.gamma)))
        self.sum_gamma = float(np.sum(self.gamma))

    @property
    def state(self) -> ModelState:
        trans = tuple(TransitionParams(float(np.exp(self.log_alpha[g])),
                                       float(np.exp(self.log_kappa[g])), self.beta[g].copy())
                      for g in range(3))
        return ModelState(trans, self.V.copy(), self.sigma_V.copy(), self.theta,
                          self.gamma.copy(), self.config.h3_clock)

    def loglik_by_patient(self):
        out = np.zeros(self.N)
        for g in range(3):
            r = self.rows.rows[g]
            if len(r) == 0:
                continue
            eta = self.xb[g] + self.V[self.rows.hospital[g], g]
            gam = self.gamma[r]
            ev = self.rows.event[g]
            with np.errstate(divide="ignore"):
                c = np.where(ev > 0, np.log(gam) + self.log_h0[g] + eta, 0.0) \
                    - gam * np.exp(eta) * self.dH0[g]
            out += np.bincount(r, weights=c, minlength=self.N)
        return out

    # -- proposals ---------------------------------------------------------------

    def _init_proposals(self):
        cfg, pri, rows = self.config, self.config.priors, self.rows
        self.prop_chol, self.scale = {}, {}
        for g in range(3):
            ev = rows.event[g]
            X = rows.X[g]
            info = (X * ev[:, None]).T @ X + np.eye(self.p[g]) / pri.beta_var
            d = max(self.p[g], 1)
            self.prop_chol[f"beta{g + 1}"] = _chol_or_zero(np.linalg.inv(info)) if self.p[g] else \
                np.zeros((0, 0))
            self.scale[f"beta{g + 1}"] = cfg.scale_beta * 2.38 / np.sqrt(d)
            # counting-process information for (log alpha, log kappa)
            alpha = np.exp(self.log_alpha[g])
            grad_a = 1.0 + alpha * rows.log_t_event[g]
            gr = np.stack([grad_a, np.ones_like(grad_a)]) * ev
            info_w = gr @ gr.T + np.eye(2) / pri.weibull_var
            self.prop_chol[f"weibull{g + 1}"] = _chol_or_zero(np.linalg.inv(info_w))
            self.scale[f"weibull{g + 1}"] = cfg.scale_weibull * 2.38 / np.sqrt(2)
        self.V_sd = 1.0 / np.sqrt(self.D + 1.0) if self.J else np.zeros((0, 3))
        self.scale_V = np.full(self.J, cfg.scale_V * 2.38 / np.sqrt(3))
        self.scale["theta"] = cfg.scale_theta * 0.5
        self.prop_chol["theta"] = np.ones((1, 1))
        self.adapt_origin = dict.fromkeys(BLOCKS, 0)

    def _adapt(self, block, accepted, n, target=None):
        if target is None:
            d = self.prop_chol[block].shape[0]
            target = 0.44 if d == 1 else 0.23
        n = max(n - self.adapt_origin.get(block, 0), 1)
        self.scale[block] *= np.exp(n ** -0.6 * (float(accepted) - target))

    def _maybe_reestimate(self):
        """Swap block proposal covariances for the empirical burn-in covariance."""
        b = self.config.burnin
        if self.iteration not in (b // 2, (3 * b) // 4):
            return
        for block, draws in self._burn_draws.items():
            if len(draws) < 50 or block == "theta":
                continue
            arr = np.asarray(draws[len(draws) // 2:])
            if arr.shape[1] == 0:
                continue
            C = np.atleast_2d(np.cov(arr, rowvar=False))
            if np.all(np.isfinite(C)) and np.linalg.matrix_rank(C) == C.shape[0]:
                self.prop_chol[block] = _chol_or_zero(C + 1e-12 * np.eye(C.shape[0]))
                mult = self.config.scale_beta if block.startswith("beta") else \
                    self.config.scale_weibull
                self.scale[block] = mult * 2.38 / np.sqrt(C.shape[0])
                # restart the Robbins-Monro gain sequence for the new proposal
                self.adapt_origin[block] = self.iteration

    def _metropolis(self, block, log_ratio):
        self.n_prop[block] += 1
        if not np.isfinite(log_ratio):
            self.n_nonfinite[block] += 1
            return False
        u = self.rng.random()
        if log_ratio >= 0 or np.log(u) < log_ratio:
            self.n_acc[block] += 1
            return True
        return False

    # -- block updates -------------------------------------------------------------

    def update_gamma(self):
        if not self.config.frailty or self.theta == 0:
            self.gamma = np.ones(self.N)
            self._gamma_stats()
            return self.gamma
        lam = np.zeros(self.N)
        for g in range(3):
            r = self.rows.rows[g]
            if len(r):
                eta = self.xb[g] + self.V[self.rows.hospital[g], g]
                lam += np.bincount(r, weights=np.exp(eta) * self.dH0[g], minlength=self.N)
        if not np.all(np.isfinite(lam)):
            bad = np.flatnonzero(~np.isfinite(lam))[:5]
            raise NumericalError(f"non-finite integrated hazard for patients {bad.tolist()}")
        phi = 1.0 / self.theta
        shape = phi + self.dataset.delta1 + self.dataset.delta2
        self.gamma = self.rng.gamma(shape, 1.0 / (phi + lam))
        self.gamma = np.maximum(self.gamma, np.finfo(float).tiny)
        self._gamma_stats()
        return self.gamma

    def _beta_loglik(self, g, xb):
        r = self.rows.rows[g]
        if len(r) == 0:
            return 0.0
        eta = xb + self.V[self.rows.hospital[g], g]
        return float(self.rows.event[g] @ eta - np.sum(self.gamma[r] * np.exp(eta) * self.dH0[g]))

    def update_beta(self, g, n_adapt=0):
        g0 = g - 1
        block = f"beta{g}"
        if self.p[g0] == 0:
            return False
        step = self.scale[block] * (self.prop_chol[block] @ self.rng.standard_normal(self.p[g0]))
        prop = self.beta[g0] + step
        xb_new = self.rows.X[g0] @ prop
        var = self.config.priors.beta_var
        with np.errstate(over="ignore", invalid="ignore"):
            lr = (self._beta_loglik(g0, xb_new) - self._beta_loglik(g0, self.xb[g0])
                  - (prop @ prop - self.beta[g0] @ self.beta[g0]) / (2 * var))
        acc = self._metropolis(block, lr)
        if acc:
            self.beta[g0] = prop
            self.xb[g0] = xb_new
        if n_adapt:
            self._adapt(block, acc, n_adapt)
        return acc

    def update_weibull(self, g, n_adapt=0):
        g0 = g - 1
        block = f"weibull{g}"
        step = self.scale[block] * (self.prop_chol[block] @ self.rng.standard_normal(2))
        la, lk = self.log_alpha[g0] + step[0], self.log_kappa[g0] + step[1]
        r = self.rows.rows[g0]
        var = self.config.priors.weibull_var
        prior = -((la ** 2 + lk ** 2) - (self.log_alpha[g0] ** 2 + self.log_kappa[g0] ** 2)) / (2 * var)
        with np.errstate(over="ignore", invalid="ignore"):
            if len(r):
                log_h0, dH0 = self.rows.baseline(g, np.exp(la), np.exp(lk))
                ev = self.rows.event[g0]
                eta = self.xb[g0] + self.V[self.rows.hospital[g0], g0]
                w = self.gamma[r] * np.exp(eta)
                lr = float(ev @ (log_h0 - self.log_h0[g0]) - w @ (dH0 - self.dH0[g0])) + prior
            else:
                log_h0 = dH0 = None
                lr = prior
        acc = self._metropolis(block, lr)
        if acc:
            self.log_alpha[g0], self.log_kappa[g0] = la, lk
            if log_h0 is not None:
                self.log_h0[g0], self.dH0[g0] = log_h0, dH0
        if n_adapt:
            self._adapt(block, acc, n_adapt)
        return acc

    def _V_target(self, V, S, prec):
        return np.sum(self.D * V - np.exp(V) * S, axis=1) - 0.5 * np.einsum("ij,jk,ik->i", V, prec, V)

    def update_V(self, hospitals=None, n_adapt=0):
        """Random-walk update of V_j for the given hospitals (default: all)."""
        if self.J == 0:
            return np.zeros(0, dtype=bool)
        S = np.column_stack([
            np.bincount(self.rows.hospital[g],
                        weights=self.gamma[self.rows.rows[g]] * np.exp(self.xb[g]) * self.dH0[g],
                        minlength=self.J) for g in range(3)])
        prec = np.linalg.inv(self.sigma_V)
        z = self.rng.standard_normal((self.J, 3))
        u = self.rng.random(self.J)
        mask = np.ones(self.J, dtype=bool)
        if hospitals is not None:
            mask[:] = False
            mask[np.asarray(hospitals)] = True
        prop = self.V + (self.scale_V[:, None] * self.V_sd) * z
        with np.errstate(over="ignore", invalid="ignore"):
            lr = self._V_target(prop, S, prec) - self._V_target(self.V, S, prec)
        finite = np.isfinite(lr)
        with np.errstate(divide="ignore"):
            acc = mask & finite & ((lr >= 0) | (np.log(u) < lr))
        self.n_prop["V"] += int(mask.sum())
        self.n_acc["V"] += int(acc.sum())
        self.n_nonfinite["V"] += int((mask & ~finite).sum())
        self.V[acc] = prop[acc]
        if n_adapt:
            step = n_adapt ** -0.6 * (acc.astype(float) - 0.23)
            self.scale_V[mask] *= np.exp(step[mask])
        return acc

    def update_sigma_V(self):
        psi = self.psi0 + self.V.T @ self.V
        psi = 0.5 * (psi + psi.T)
        try:
            np.linalg.cholesky(psi)
        except np.linalg.LinAlgError:
            raise NumericalError(f"inverse-Wishart scale matrix not positive definite:\n{psi}") from None
        df = self.config.priors.nu0 + self.J
        self.sigma_V = np.atleast_2d(stats.invwishart.rvs(df=df, scale=psi, random_state=self.rng))
        self.sigma_V = 0.5 * (self.sigma_V + self.sigma_V.T)
        return self.sigma_V

    def _theta_target(self, log_theta):
        pri = self.config.priors
        phi = np.exp(-log_theta)
        n = self.N
        ll = (n * (phi * np.log(phi) - gammaln(phi)) + (phi - 1.0) * self.sum_log_gamma
              - phi * self.sum_gamma)
        return ll + pri.theta_shape * np.log(phi) - pri.theta_rate * phi

    def update_theta(self, n_adapt=0):
        if not self.config.frailty:
            return False
        cur = np.log(self.theta)
        prop = cur + self.scale["theta"] * self.rng.standard_normal()
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lr = self._theta_target(prop) - self._theta_target(cur)
        acc = self._metropolis("theta", lr)
        if acc:
            self.theta = float(np.exp(prop))
        if n_adapt:
            self._adapt("theta", acc, n_adapt, target=0.44)
        return acc

    # -- driver ----------------------------------------------------------------------

    def sweep(self):
        """One systematic-scan iteration."""
        cfg = self.config
        self.iteration += 1
        n_adapt = self.iteration if (cfg.adapt and self.iteration <= cfg.burnin) else 0
        self.update_gamma()
        for g in (1, 2, 3):
            self.update_beta(g, n_adapt)
        for g in (1, 2, 3):
            self.update_weibull(g, n_adapt)
        self.update_V(n_adapt=n_adapt)
        self.update_sigma_V()
        self.update_theta(n_adapt)
        if n_adapt:
            for g in range(3):
                self._burn_draws[f"beta{g + 1}"].append(self.beta[g].copy())
                self._burn_draws[f"weibull{g + 1}"].append(
                    np.array([self.log_alpha[g], self.log_kappa[g]]))
            self._maybe_reestimate()
        if self.iteration == cfg.burnin:
            self._burn_draws = {b: [] for b in self._burn_draws}
            self.n_prop = dict.fromkeys(BLOCKS, 0)
            self.n_acc = dict.fromkeys(BLOCKS, 0)

    def acceptance_rates(self):
        return {b: (self.n_acc[b] / self.n_prop[b] if self.n_prop[b] else float("nan"))
                for b in BLOCKS}

    def run(self, samples: Optional[PosteriorSamples] = None, until=None):
        """Advance to iteration ``until`` (default n_iter), storing retained draws."""
        cfg = self.config
        until = cfg.n_iter if until is None else until
        if samples is None:
            samples = PosteriorSamples.allocate(cfg.n_samples, self.N, self.J, self.p, cfg.h3_clock)
        while self.iteration < until:
            try:
                self.sweep()
            except NumericalError as exc:
                raise NumericalError(f"iteration {self.iteration}: {exc}") from exc
            k = self.iteration - cfg.burnin
            if k > 0 and k % cfg.thin == 0:
                m = k // cfg.thin - 1
                if m < len(samples):
                    samples.store(m, self.state, self.loglik_by_patient())
        samples.acceptance = self.acceptance_rates()
        return samples

    # -- checkpointing ---------------------------------------------------------------------

    def checkpoint(self, path, samples: Optional[PosteriorSamples] = None):
        """Write the full chain state (and draws so far) to an ``.npz`` file.

        Header fields: ``format``, ``version``, ``seed``, ``iteration``,
        ``h3_clock``, the RNG bit-generator state and the adaptation counters.
        """
        header = {
            "format": "semicomp-checkpoint", "version": CHECKPOINT_VERSION,
            "seed": self.config.seed, "iteration": self.iteration,
            "h3_clock": self.config.h3_clock, "theta": self.theta,
            "rng": self.rng.bit_generator.state,
            "scale": self.scale, "adapt_origin": self.adapt_origin, "n_prop": self.n_prop, "n_acc": self.n_acc,
            "n_nonfinite": self.n_nonfinite, "config": _config_dict(self.config),
        }
        arrs = {"log_alpha": self.log_alpha, "log_kappa": self.log_kappa, "V": self.V,
                "sigma_V": self.sigma_V, "gamma": self.gamma, "scale_V": self.scale_V}
        for g in range(3):
            arrs[f"beta{g + 1}"] = self.beta[g]
        for k, v in self.prop_chol.items():
            arrs[f"chol_{k}"] = v
        for k, v in self._burn_draws.items():
            width = self.prop_chol[k].shape[0]
            arrs[f"burn_{k}"] = np.asarray(v, dtype=float).reshape(len(v), width)
        if samples is not None:
            arrs.update(samples.arrays(prefix="samples_"))
        _npz.savez(path, header=np.array(json.dumps(header, sort_keys=True)), **arrs)

    @classmethod
    def restore(cls, path, dataset: Dataset):
        """Rebuild a sampler (and any stored draws) from :meth:`checkpoint` output."""
        with np.load(path, allow_pickle=False) as f:
            header = json.loads(str(f["header"]))
            arrs = {k: f[k] for k in f.files if k != "header"}
        if header.get("format") != "semicomp-checkpoint" or header["version"] != CHECKPOINT_VERSION:
            raise ConfigError("not a compatible checkpoint file")
        config = config_from_dict(header["config"])
        s = cls(dataset, config)
        s.log_alpha, s.log_kappa = arrs["log_alpha"], arrs["log_kappa"]
        s.beta = [arrs[f"beta{g}"] for g in (1, 2, 3)]
        s.V, s.sigma_V, s.gamma = arrs["V"], arrs["sigma_V"], arrs["gamma"]
        s.theta = header["theta"]
        s.scale_V = arrs["scale_V"]
        s._refresh()
        s.iteration = header["iteration"]
        s.rng.bit_generator.state = header["rng"]
        s.scale = {k: float(v) for k, v in header["scale"].items()}
        s.adapt_origin = {k: int(v) for k, v in header["adapt_origin"].items()}
        s.n_prop, s.n_acc, s.n_nonfinite = header["n_prop"], header["n_acc"], header["n_nonfinite"]
        for k in s.prop_chol:
            s.prop_chol[k] = arrs[f"chol_{k}"]
        for k in s._burn_draws:
            s._burn_draws[k] = list(arrs[f"burn_{k}"])
        samples = None
        if "samples_alpha" in arrs:
            samples = PosteriorSamples.from_arrays(arrs, config.h3_clock, prefix="samples_")
        return s, samples


def _config_dict(config: McmcConfig):
    d = asdict(config)
    d["priors"]["psi0"] = [list(r) for r in config.priors.psi0_matrix]
    return d


def config_from_dict(d) -> McmcConfig:
    d = dict(d)
    pri = dict(d.pop("priors", {}))
    if "psi0" in pri:
        pri["psi0"] = tuple(tuple(float(v) for v in r) for r in pri["psi0"])
    return McmcConfig(priors=Priors(**pri), **d)


def run_chain(dataset: Dataset, config: McmcConfig, init: Optional[ModelState] = None):
    """Run a full chain and return the retained draws."""
    return GibbsSampler(dataset, config, init).run()


# ----------------------------------------------------------------------------------
# single-block updates on an explicit state


def _single_block_sampler(state, dataset, rng, priors=None, frailty=True):
    cfg = McmcConfig(n_iter=1, burnin=0, h3_clock=state.h3_clock, frailty=frailty,
                     priors=priors or Priors(), adapt=False)
    s = GibbsSampler(dataset, cfg, state)
    s.rng = rng
    return s


def update_gamma(state: ModelState, dataset: Dataset, rng, frailty=True):
    """Exact Gibbs draw of all frailties: ``Gamma(1/theta + d1 + d2, 1/theta + Lambda)``."""
    s = _single_block_sampler(state, dataset, rng, frailty=frailty and state.theta > 0)
    return s.update_gamma().copy()


def _isotropic(s, block, scale):
    d = s.prop_chol[block].shape[0]
    s.prop_chol[block] = np.eye(d)
    s.scale[block] = scale


def update_beta(state, dataset, g, rng, scale=0.1, priors=None):
    """Random-walk Metropolis update of ``beta_g``; returns (new state, accepted)."""
    s = _single_block_sampler(state, dataset, rng, priors)
    _isotropic(s, f"beta{g}", scale)
    acc = s.update_beta(g)
    return s.state, acc


def update_weibull(state, dataset, g, rng, scale=0.1, priors=None):
    """Joint random walk on ``(log alpha_g, log kappa_g)``; returns (new state, accepted)."""
    s = _single_block_sampler(state, dataset, rng, priors)
    _isotropic(s, f"weibull{g}", scale)
    acc = s.update_weibull(g)
    return s.state, acc


def update_V(state, dataset, j, rng, scale=0.1, priors=None):
    """Random-walk update of hospital ``j``'s effect vector; returns (new state, accepted)."""
    s = _single_block_sampler(state, dataset, rng, priors)
    s.V_sd = np.ones_like(s.V_sd)
    s.scale_V[:] = scale
    acc = s.update_V(hospitals=[j])
    return s.state, bool(acc[j])


def update_theta(state, dataset, rng, scale=0.1, priors=None):
    """Random walk on ``log theta`` with the Gamma prior on ``1/theta``."""
    s = _single_block_sampler(state, dataset, rng, priors)
    s.scale["theta"] = scale
    acc = s.update_theta()
    return s.state, acc


def update_sigma_V(state, rng, priors=None):
    """Exact draw ``Sigma_V ~ InvWishart(psi0 + sum_j V_j V_j', nu0 + J)``."""
    J = state.V.shape[0]
    ds = Dataset.empty(n_hospitals=J)
    st = ModelState(state.trans, state.V, state.sigma_V, state.theta, np.zeros(0), state.h3_clock)
    s = _single_block_sampler(st, ds, rng, priors)
    return s.update_sigma_V().copy()


# ----------------------------------------------------------------------------------
# model comparison


def compute_dic(samples: PosteriorSamples, dataset: Dataset):
    """Deviance information criterion ``2 * mean(D) - D(posterior mean)``.

    Deviance is ``-2 * log-likelihood`` conditional on the frailties and
    hospital effects; the plug-in uses posterior means of alpha, kappa, beta,
    V and gamma.
    """
    from .model import loglik_by_patient
    if samples.loglik.size == 0 and dataset.n_patients:
        raise ValueError("log-likelihood matrix is empty")
    mean_dev = float(np.mean(-2.0 * samples.loglik.sum(axis=1)))
    dev_at_mean = -2.0 * float(np.sum(loglik_by_patient(dataset, samples.mean_state())))
    return 2.0 * mean_dev - dev_at_mean


def log_cpo(loglik):
    """Per-patient ``log CPO_i = -log mean_m exp(-loglik[m, i])`` computed in log space."""
    loglik = np.asarray(loglik, dtype=float)
    M = loglik.shape[0]
    return np.log(M) - logsumexp(-loglik, axis=0)


def compute_lpml(samples: PosteriorSamples, dataset: Optional[Dataset] = None):
    """Log pseudo-marginal likelihood, ``sum_i log CPO_i``.

    Raises NumericalError if any CPO is zero or infinite.
    """
    lc = log_cpo(samples.loglik)
    if not np.all(np.isfinite(lc)):
        bad = np.flatnonzero(~np.isfinite(lc))[:5]
        raise NumericalError(f"non-finite CPO for patients {bad.tolist()}")
    return float(np.sum(lc))
