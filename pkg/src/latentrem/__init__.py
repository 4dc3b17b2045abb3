"""Dynamic latent space relational event models fitted by stochastic
variational inference with a fast convex clustering penalty."""

from .cluster import (ClusterState, centroids, clust_penalty_fast, clust_penalty_minibatch,
                      connected_components, pilot_freeze, radius_sweep)
from .events import ContinuousEvents, DiscreteEvents, NodeRegistry, discretize, load_events, save_events
from .model import (CovariateSpec, RateModel, SimilarityConfig, assemble_loss, log_rate,
                    loglik_discrete, loglik_discrete_cc, loglik_partial_cc)
from .optim import AdamState, adam_step, stopping_check
from .sampler import KernelPairHistory, Sampler, sample_minibatch
from .simkit import ScenarioConfig, clustering_accuracy, generate, procrustes_mse, run_experiment
from .splines import Coefficients, SplineBasis, position, smoothness_penalty
from .svi import (FitConfig, ModelConfig, PipelineConfig, VariationalState, fit_pipeline, fit_svi,
                  select_radius)

__version__ = "0.1.0"
