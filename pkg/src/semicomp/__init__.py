"""Hierarchical illness-death models for hospital readmission and mortality profiling."""

from .exceptions import ConfigError, DataError, NumericalError, SemicompError
from .model import (Dataset, ModelState, PatientRecord, TransitionParams, log_likelihood_patient,
                    log_likelihood_total, transition_hazard, weibull_cum_hazard, weibull_hazard)
from .simulate import CovariateSpec, SimConfig, outcome_table, simulate_dataset
from .mcmc import McmcConfig, PosteriorSamples, Priors, compute_dic, compute_lpml, run_chain
from .quadrature import QuadratureRule, gauss_hermite_rule, gauss_legendre_rule
from .metrics import (RatioSamples, cdf_death, cif_readmission, excess_ratios,
                      posterior_ratio_summary, standardized_rate)
from .profiling import (Classification, LossSpec, bayes_risk_hat, brute_force_minimizer,
                        classify_quadrant, classify_topk, loss, reduce_candidates,
                        sequential_minimizer)
from .glmm import derive_binary_outcomes, fit_glmm, glmm_excess_ratio
from .io import RunConfig, ingest_dataset, load_config, write_dataset_csv
from .pipeline import run_pipeline
from .estimators import BayesRiskClassifier, IllnessDeathModel, LogisticGLMM

__version__ = "0.1.0"
