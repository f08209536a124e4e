"""Simulated client: local mini-batch SGD on an assigned subnetwork, and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .arch import ArchDescriptor, SpaceConfig
from .data import ClientPartition, Dataset
from .supernet import SubnetWeights, predict, subnet_loss_and_grad


class ClientDivergence(RuntimeError):
    def __init__(self, client_id: int, round_: Optional[int], loss: float):
        where = f"round {round_}, " if round_ is not None else ""
        super().__init__(f"{where}client {client_id}: non-finite loss {loss}")
        self.client_id = client_id
        self.round = round_


@dataclass(frozen=True)
class LocalTrainConfig:
    local_epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("local_epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    def steps(self, n_k: int) -> int:
        return self.local_epochs * math.ceil(n_k / self.batch_size)


def client_update(
    space: SpaceConfig,
    partition: ClientPartition,
    train: Dataset,
    w: SubnetWeights,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
    round_: Optional[int] = None,
) -> SubnetWeights:
    """Run ``cfg.local_epochs`` of plain SGD over a fresh shuffle each epoch.

    ``partition.indices`` index into ``train``. The last partial batch is kept.
    """
    if partition.n_k == 0:
        raise ValueError(f"client {partition.client_id} has no data")
    out = w.copy()
    lr = cfg.learning_rate
    # overflow surfaces as a non-finite loss, reported as ClientDivergence
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.local_epochs):
            order = rng.permutation(partition.indices)
            for start in range(0, order.size, cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                loss, grads = subnet_loss_and_grad(space, out, train.features[batch], train.labels[batch])
                if not math.isfinite(loss):
                    raise ClientDivergence(partition.client_id, round_, loss)
                for name, g in grads.items():
                    out.tensors[name] -= lr * g
    return out


def evaluate(space: SpaceConfig, params: Mapping[str, np.ndarray], arch: ArchDescriptor, test: Dataset) -> float:
    if len(test) == 0:
        raise ValueError("empty evaluation set")
    pred = predict(space, params, arch, test.features)
    return float(np.mean(pred == test.labels))
