"""Temporal Bayesian model of the driving stack and the fault miner.

The model is a three-slice linear-Gaussian network whose topology comes
from the variable registry: intra-slice edges follow the data-flow, the
slice-to-slice edges carry vehicle state and actuator memory forward.
Training fits the conditional Gaussians from traces, inference answers
counterfactual questions under forced-variable interventions, and the
miner turns those answers into a short list of (scene, fault) pairs
worth replaying.
"""
from faultminer.bayes.network import (
    GaussianDag,
    matrix_triples,
    trace_matrix,
    NetError,
    TemporalBayesNet,
    build_topology,
    load_model,
    sample_triples,
    save_model,
)
from faultminer.bayes.train import TrainError, em_train, log_likelihood
from faultminer.bayes.infer import GibbsConfig, InferResult, gibbs_infer
from faultminer.bayes.mine import MinedPair, MiningResult, fault_do_map, mine_trace

__all__ = [
    "GaussianDag",
    "NetError",
    "TemporalBayesNet",
    "build_topology",
    "save_model",
    "load_model",
    "sample_triples",
    "trace_matrix",
    "matrix_triples",
    "TrainError",
    "em_train",
    "log_likelihood",
    "GibbsConfig",
    "InferResult",
    "gibbs_infer",
    "MinedPair",
    "MiningResult",
    "fault_do_map",
    "mine_trace",
]
