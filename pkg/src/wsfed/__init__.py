"""Deterministic simulator for weight-shared federated training of nested subnetworks."""

from .arch import (
    ArchDescriptor,
    SliceMask,
    SpaceConfig,
    family_size,
    flops,
    format_arch,
    is_subarch,
    largest,
    make_arch,
    mask,
    param_count,
    parse_arch,
    random_arch,
    smallest,
)
from .aggregation import BetaSchedule, ClientUpdate, aggregate_maxnet, aggregate_overlap, beta_at, coverage
from .config import ExperimentConfig, load_config
from .orchestrator import run
from .supernet import SubnetWeights, extract, forward, init_supernet, loss_and_grad, superimpose

__version__ = "0.1.0"
