"""Binary pairwise MRFs, exact and approximate inference, and GNN inference
trained against exact marginals."""

from .classical import (FixedPointConfig, bp_max_product, bp_sum_product, mean_field,
                        mean_field_decode, trbp)
from .gnn import MSG, NODE, GNNArchitecture, GNNWeights, init_weights, predict
from .model import (BinaryMRF, Dataset, DatasetSpec, GraphTopology, LabeledModel, StructureKind,
                    build_topology, generate_dataset, sample_erdos_renyi_connected, sample_mrf)
from .oracle import enumerate_mrf
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BinaryMRF", "Dataset", "DatasetSpec", "FixedPointConfig", "GNNArchitecture", "GNNWeights",
    "GraphTopology", "LabeledModel", "MSG", "NODE", "StructureKind", "TrainConfig",
    "bp_max_product", "bp_sum_product", "build_topology", "enumerate_mrf", "generate_dataset",
    "init_weights", "mean_field", "mean_field_decode", "predict", "sample_erdos_renyi_connected",
    "sample_mrf", "train", "trbp",
]
