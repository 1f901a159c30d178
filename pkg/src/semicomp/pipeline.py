"""Stage orchestration: simulate -> fit -> metrics -> profile -> glmm -> report.

Every stage reads its inputs from, and writes its artifacts to, one output
directory, so stages can run together or one at a time. After each stage
``manifest.json`` is rewritten with the config hash, root seed, library
versions and a checksum of every artifact. A failing stage leaves a manifest
with ``status: failed`` and the stage name.

Randomness: the root seed feeds ``SeedSequence(root, spawn_key=(i,))`` with
``i`` the fixed index of the stage in ``SEED_STREAMS``. Stage-level ``seed``
fields of the config are overwritten from these streams, so ``seed`` at the
top level is the only one that matters for a pipeline run.
"""

import json
import os
from dataclasses import replace

import numpy as np

from . import _npz
from . import io as sio
from .exceptions import ConfigError, DataError, NumericalError, SemicompError
from .glmm import GlmmConfig, derive_binary_outcomes, fit_glmm, glmm_excess_ratio
from .mcmc import PosteriorSamples, compute_dic, compute_lpml, run_chain
from .metrics import STATISTICS, RatioSamples, excess_ratios, posterior_ratio_summary
from .profiling import (LossSpec, classify_samples, marginal_probabilities,
                        multi_start_minimizer, plugin_classification, random_start,
                        reduce_candidates, _ranks)
from .simulate import OUTCOME_CELLS, outcome_counts, simulate_dataset

STAGES = ("simulate", "fit", "metrics", "profile", "glmm", "report")
SEED_STREAMS = ("simulate", "fit", "profile", "glmm", "sensitivity")
GLMM_STATISTICS = {"readmission": "theta_glmm_readmit", "death": "theta_glmm_death"}

DATASET = "dataset.csv"
TRUTH = "truth.json"
POSTERIOR = "posterior.npz"
FIT_SUMMARY = "fit_summary.json"
RATIOS = "ratios.csv"
RATIO_SAMPLES = "ratio_samples.npz"
GLMM_RATIOS = "glmm_ratios.csv"
GLMM_SAMPLES = "glmm_samples.npz"
SENSITIVITY = "sensitivity.csv"
MANIFEST = "manifest.json"
CONFIG_COPY = "config.yaml"


def stage_seed(root, stage):
    """32-bit seed for ``stage`` derived from the root seed."""
    ss = np.random.SeedSequence(int(root), spawn_key=(SEED_STREAMS.index(stage),))
    return int(ss.generate_state(1, np.uint32)[0])


def classification_file(scheme):
    return f"classification_{scheme}.csv"


def _category_labels(scheme):
    return ["0", "1"] if scheme == "topk" else ["1", "2", "3", "4"]


def _dump_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


class Pipeline:
    """Runs pipeline stages for one config and output directory."""

    def __init__(self, config: sio.RunConfig, out_dir, threads=None):
        self.config = sio.validate_run_config(config)
        self.out_dir = str(out_dir)
        self.threads = int(threads or config.threads)
        self.completed = []
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.out_dir}: {exc}") from None
        if not os.access(self.out_dir, os.W_OK):
            raise ConfigError(f"output directory {self.out_dir} is not writable")
        if config.dataset is not None and not os.path.exists(config.dataset):
            raise ConfigError(f"dataset file not found: {config.dataset}")

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def _require(self, name, stage):
        p = self.path(name)
        if not os.path.exists(p):
            raise DataError(f"{name} not found in {self.out_dir}; run the '{stage}' stage first")
        return p

    # -- inputs -----------------------------------------------------------------------

    def dataset(self):
        if self.config.dataset is not None:
            return sio.ingest_dataset(self.config.dataset)
        return sio.ingest_dataset(self._require(DATASET, "simulate"))

    def posterior(self):
        return PosteriorSamples.load(self._require(POSTERIOR, "fit"))

    def ratio_samples(self):
        with np.load(self._require(RATIO_SAMPLES, "metrics"), allow_pickle=False) as f:
            return RatioSamples(f["times"], f["hospital_labels"], f["mu_A1"], f["mu_S1"],
                                f["mu_A2"], f["mu_S2"])

    # -- stages -----------------------------------------------------------------------

    def simulate(self):
        sim = replace(self.config.simulate, seed=stage_seed(self.config.seed, "simulate"))
        data, truth = simulate_dataset(sim)
        sio.write_dataset_csv(data, self.path(DATASET))
        st = truth.state
        _dump_json(self.path(TRUTH), {
            "alpha": st.alpha.tolist(), "kappa": st.kappa.tolist(),
            "beta": [b.tolist() for b in st.beta], "V": st.V.tolist(),
            "sigma_V": np.asarray(st.sigma_V).tolist(), "theta": float(st.theta),
            "gamma": st.gamma.tolist(), "h3_clock": st.h3_clock, "seed": sim.seed,
            "outcome_counts": dict(zip(OUTCOME_CELLS,
                                       outcome_counts(data, sim.c_admin).tolist())),
        })
        return [DATASET, TRUTH]

    def fit(self):
        data = self.dataset()
        mc = replace(self.config.mcmc, seed=stage_seed(self.config.seed, "fit"))
        samples = run_chain(data, mc)
        samples.save(self.path(POSTERIOR))
        _dump_json(self.path(FIT_SUMMARY), {
            "n_samples": len(samples.theta), "acceptance": samples.acceptance,
            "dic": compute_dic(samples, data), "lpml": compute_lpml(samples, data),
        })
        return [POSTERIOR, FIT_SUMMARY]

    def metrics(self):
        data = self.dataset()
        m = self.config.metrics
        ratios = excess_ratios(data, self.posterior(), m.times, m.K, m.gamma_one, self.threads)
        _npz.savez(self.path(RATIO_SAMPLES), times=ratios.times,
                   hospital_labels=np.asarray(ratios.hospital_labels), mu_A1=ratios.mu_A1,
                   mu_S1=ratios.mu_S1, mu_A2=ratios.mu_A2, mu_S2=ratios.mu_S2)
        summary = posterior_ratio_summary(ratios, STATISTICS)
        sio.write_ratio_csv(self.path(RATIOS), ratios.hospital_labels, ratios.times, summary,
                            STATISTICS)
        return [RATIOS, RATIO_SAMPLES]

    def profile(self):
        ratios = self.ratio_samples()
        p = self.config.profiling
        k = int(np.flatnonzero(ratios.times == p.horizon)[0])
        t1, t2 = ratios.theta1[:, :, k], ratios.theta2[:, :, k]
        if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t2))):
            raise NumericalError("undefined excess ratios (zero standardized rate) at the horizon")
        root = np.random.SeedSequence(stage_seed(self.config.seed, "profile"))
        out = []
        for scheme, ss in zip(p.schemes, root.spawn(len(p.schemes))):
            res = profile_scheme(scheme, t1, t2, p, ss)
            name = classification_file(scheme)
            sio.write_classification_csv(self.path(name), ratios.hospital_labels, scheme,
                                         res["plugin"], res["final"], res["marginals"],
                                         res["risk"], _category_labels(scheme))
            out.append(name)
        return out

    def glmm(self):
        data = self.dataset()
        g = self.config.glmm
        root = np.random.SeedSequence(stage_seed(self.config.seed, "glmm"))
        summary, arrays = {}, {}
        for (target, stat), ss in zip(GLMM_STATISTICS.items(), root.spawn(2)):
            rec = derive_binary_outcomes(data, g.window, target)
            gc = GlmmConfig(n_iter=g.n_iter, burnin=g.burnin, thin=g.thin,
                            seed=int(ss.generate_state(1, np.uint32)[0]))
            draws = fit_glmm(rec, gc)
            theta, _, _ = glmm_excess_ratio(rec, draws, g.K)
            med, lo, hi = np.quantile(theta, [0.5, 0.025, 0.975], axis=0)
            summary[stat] = (med[:, None], lo[:, None], hi[:, None])
            arrays.update({f"{target}_beta": draws.beta, f"{target}_V": draws.V,
                           f"{target}_sigma2": draws.sigma2, f"{target}_theta": theta})
        sio.write_ratio_csv(self.path(GLMM_RATIOS), data.hospital_labels, [g.window], summary,
                            list(GLMM_STATISTICS.values()))
        _npz.savez(self.path(GLMM_SAMPLES), **arrays)
        return [GLMM_RATIOS, GLMM_SAMPLES]

    def report(self):
        out = []
        for scheme in self.config.profiling.schemes:
            c = sio.read_classification_csv(self._require(classification_file(scheme), "profile"))
            cats = [int(v) for v in _category_labels(scheme)]
            tab = crosstab(c["plugin_label"], c["loss_label"], cats, cats)
            name = f"report_plugin_vs_loss_{scheme}.csv"
            sio.write_table_csv(self.path(name), [f"plugin_{v}" for v in cats],
                                [f"loss_{v}" for v in cats], tab, "plugin\\loss")
            out.append(name)
        labels, times, scr = sio.read_ratio_csv(self._require(RATIOS, "metrics"))
        glabels, gtimes, glmm = sio.read_ratio_csv(self._require(GLMM_RATIOS, "glmm"))
        if not np.array_equal(np.asarray(labels).astype(str), np.asarray(glabels).astype(str)):
            raise DataError("hospital labels differ between ratio files")
        window = float(gtimes[0])
        hit = np.flatnonzero(times == window)
        if hit.size == 0:
            raise ConfigError(f"GLMM window {window} is not on the metrics time grid")
        for outcome, scr_stat in (("readmission", "theta1"), ("death", "theta2")):
            a = glmm[GLMM_STATISTICS[outcome]][0][:, 0]
            b = scr[scr_stat][0][:, hit[0]]
            tab = win_loss_table(a, b)
            name = f"report_glmm_vs_scr_{outcome}.csv"
            sio.write_table_csv(self.path(name), ["glmm_win", "glmm_loss"],
                                ["scr_win", "scr_loss"], tab, "glmm\\scr")
            out.append(name)
        return out

    def sensitivity(self):
        """K-ladder: largest relative deviation of each statistic from the finest K."""
        data = self.dataset()
        post = self.posterior()
        m = self.config.metrics
        M = len(post.theta)
        n = min(m.sensitivity_samples, M)
        idx = np.unique(np.round(np.linspace(0, M - 1, n)).astype(int))
        states = [post.state(i) for i in idx]
        ladder = sorted(set(int(k) for k in m.ladder))
        res = {K: excess_ratios(data, states, m.times, K, m.gamma_one, self.threads)
               for K in ladder}
        ref = res[ladder[-1]]
        path = self.path(SENSITIVITY)
        with open(path, "w") as f:
            f.write("K,reference_K,statistic,max_rel_diff\n")
            for K in ladder:
                for stat in STATISTICS:
                    a, b = res[K].get(stat), ref.get(stat)
                    d = float(np.max(np.abs(a - b) / np.abs(b)))
                    f.write(f"{K},{ladder[-1]},{stat},{d!r}\n")
        return [SENSITIVITY]

    # -- driver -----------------------------------------------------------------------

    def manifest(self, status="complete", error=None):
        artifacts = [self.path(n) for n in sorted(os.listdir(self.out_dir)) if n != MANIFEST]
        return sio.write_manifest(self.path(MANIFEST), self.config, artifacts, self.completed,
                                  status, error)

    def run_stage(self, name):
        if name not in STAGES + ("sensitivity",):
            raise ConfigError(f"unknown stage {name!r}")
        try:
            produced = getattr(self, name)()
        except Exception as exc:
            err = _as_semicomp_error(exc, name)
            self.manifest("failed", str(err))
            raise err from exc
        self.completed.append(name)
        self.manifest()
        return produced

    def run(self, stages=None):
        if stages is None:
            stages = [s for s in STAGES if not (s == "simulate" and self.config.dataset)]
        sio.dump_config(self.config, self.path(CONFIG_COPY))
        produced = []
        for s in stages:
            produced += self.run_stage(s)
        return [self.path(p) for p in produced]


def _as_semicomp_error(exc, stage):
    msg = f"stage '{stage}' failed: {exc}"
    if isinstance(exc, SemicompError):
        return type(exc)(msg)
    if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)):
        return NumericalError(msg)
    if isinstance(exc, (ValueError, KeyError, OSError)):
        return DataError(msg)
    return SemicompError(msg)


def run_pipeline(config: sio.RunConfig, out_dir, stages=None, threads=None):
    """Run ``stages`` (default: all but simulate when a dataset path is given).

    Returns the list of artifact paths written.
    """
    return Pipeline(config, out_dir, threads).run(stages)


# ---------------------------------------------------------------------------
# profiling and report helpers


def _project_start(labels, space, scheme, theta_median):
    """Move a start classification into a reduced candidate space."""
    labels = np.array(labels, dtype=np.int64)
    for j, c in space.fixed.items():
        labels[j] = c
    if scheme == "topk":
        free = np.array(space.free, dtype=np.int64)
        need = space.k - sum(1 for c in space.fixed.values() if c == 1)
        labels[free] = 0
        if need > 0:
            _, order = _ranks(theta_median[free])
            labels[free[order[:need]]] = 1
    return labels


def profile_scheme(scheme, theta1, theta2, pcfg, seed_seq):
    """Plug-in and Bayes-risk classifications for one scheme.

    Starts: the plug-in (posterior-median) classification followed by
    ``n_starts - 1`` random classifications, each run with its own seed.
    """
    gf = pcfg.gamma_frac if scheme == "topk" else None
    phi = classify_samples(scheme, theta1, theta2, gf)
    weights = pcfg.quadrant_weights if scheme == "quadrant" else None
    spec = LossSpec(scheme, None if weights is None else np.asarray(weights, float), pcfg.penalty)
    plugin = plugin_classification(scheme, theta1, theta2, gf)
    space = reduce_candidates(phi, pcfg.epsilon, scheme, gf)
    J = phi.shape[1]
    med = np.median(theta1, axis=0)
    rng_ss, *seed_ss = seed_seq.spawn(pcfg.n_starts + 1)
    rng = np.random.default_rng(rng_ss)
    starts = [plugin.labels] + [random_start(J, scheme, rng, gf).labels
                                for _ in range(pcfg.n_starts - 1)]
    starts = [_project_start(s, space, scheme, med) for s in starts]
    seeds = [int(s.generate_state(1, np.uint32)[0]) for s in seed_ss]
    res = multi_start_minimizer(phi, spec, starts, seeds, space, gf)
    return {"plugin": plugin.labels, "final": res.classification.labels, "risk": res.risk,
            "marginals": marginal_probabilities(phi, spec), "space": space, "result": res}


def crosstab(a, b, row_cats, col_cats):
    """Counts ``tab[r, c] = #{j : a_j == row_cats[r], b_j == col_cats[c]}``."""
    a, b = np.asarray(a), np.asarray(b)
    tab = np.zeros((len(row_cats), len(col_cats)), dtype=np.int64)
    for r, x in enumerate(row_cats):
        for c, y in enumerate(col_cats):
            tab[r, c] = int(np.sum((a == x) & (b == y)))
    if tab.sum() != len(a):
        raise DataError("labels outside the listed categories")
    return tab


def win_loss_table(theta_a, theta_b):
    """2x2 counts of ratio <= 1 ("win") versus > 1 ("loss") under two models."""
    return crosstab(np.asarray(theta_a) > 1, np.asarray(theta_b) > 1, [False, True],
                    [False, True])
