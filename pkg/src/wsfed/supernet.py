"""Supernetwork weights, extraction / superimposition, and the elastic forward pass.

A ``ParamSet`` is an ordered ``dict`` of float64 arrays keyed by tensor name
(``stem.w``, ``s0.b1.w2``, ``head.b``, ...). A :class:`SubnetWeights` holds
only the tensors an architecture owns, each cut to its mask extent; tensors
of inactive blocks are absent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np

from .arch import ArchDescriptor, SpaceConfig, check_arch, mask

ParamSet = Dict[str, np.ndarray]


@dataclass
class SubnetWeights:
    arch: ArchDescriptor
    tensors: Dict[str, np.ndarray]

    def copy(self) -> "SubnetWeights":
        return SubnetWeights(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def num_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_supernet(space: SpaceConfig, seed: int) -> ParamSet:
    """He-normal matrices (std ``sqrt(2 / fan_in)``), zero biases.

    Residual-branch output matrices (``.w2``) are further scaled by
    ``1 / num_blocks``; without normalization layers the residual
    stream would otherwise grow roughly 2x in variance per block.
    """
    rng = np.random.default_rng(seed)
    branch_scale = 1.0 / space.num_blocks
    params: ParamSet = {}
    for name, shape in space.tensor_shapes().items():
        if len(shape) == 2:
            std = np.sqrt(2.0 / shape[0])
            if name.endswith(".w2"):
                std *= branch_scale
            params[name] = rng.normal(0.0, std, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def zeros_like(params: Mapping[str, np.ndarray]) -> ParamSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Mapping[str, np.ndarray]) -> ParamSet:
    return {k: v.copy() for k, v in params.items()}


def check_params(space: SpaceConfig, params: Mapping[str, np.ndarray]) -> None:
    shapes = space.tensor_shapes()
    if list(params) != list(shapes):
        raise ValueError("parameter names do not match the space")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: shape {params[name].shape} != {shape}")


def _views(space: SpaceConfig, params: Mapping[str, np.ndarray], arch: ArchDescriptor) -> Dict[str, np.ndarray]:
    out = {}
    for name, prods in mask(space, arch).ranges.items():
        if prods:
            (prod,) = prods
            out[name] = params[name][tuple(slice(a, b) for a, b in prod)]
    return out


def extract(space: SpaceConfig, params: Mapping[str, np.ndarray], arch: ArchDescriptor) -> SubnetWeights:
    """Copy the slices ``arch`` owns out of the supernetwork."""
    return SubnetWeights(arch, {k: v.copy() for k, v in _views(space, params, arch).items()})


def superimpose(
    space: SpaceConfig, base: Mapping[str, np.ndarray], arch: ArchDescriptor, w: SubnetWeights
) -> ParamSet:
    """Return a copy of ``base`` with the slices of ``arch`` overwritten by ``w``."""
    if w.arch != arch:
        raise ValueError("subnet weights belong to a different architecture")
    out = copy_params(base)
    for name, sls in mask(space, arch).ranges.items():
        if sls:
            (prod,) = sls
            sl = tuple(slice(a, b) for a, b in prod)
            if out[name][sl].shape != w.tensors[name].shape:
                raise ValueError(f"{name}: subnet tensor shape {w.tensors[name].shape} does not match mask")
            out[name][sl] = w.tensors[name]
    return out


def _block_names(space: SpaceConfig, arch: ArchDescriptor) -> List[str]:
    return [space.block_prefix(s, i) for s, i, _ in arch.active_blocks(space)]


def _check_batch(x: np.ndarray, input_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != input_dim:
        raise ValueError(f"batch must have shape (n, {input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")
    return x


def _forward(t: Mapping[str, np.ndarray], blocks: List[str], x: np.ndarray, keep: bool):
    cache = []
    pre = x @ t["stem.w"] + t["stem.b"]
    h = np.maximum(pre, 0.0)
    for p in blocks:
        z = h @ t[p + ".w1"] + t[p + ".b1"]
        a = np.maximum(z, 0.0)
        if keep:
            cache.append((h, z, a))
        h = h + a @ t[p + ".w2"] + t[p + ".b2"]
    logits = h @ t["head.w"] + t["head.b"]
    return logits, (pre, cache, h)


def subnet_forward(space: SpaceConfig, w: SubnetWeights, x: np.ndarray) -> np.ndarray:
    x = _check_batch(x, space.input_dim)
    logits, _ = _forward(w.tensors, _block_names(space, w.arch), x, keep=False)
    return logits


def forward(space: SpaceConfig, params: Mapping[str, np.ndarray], arch: ArchDescriptor, x: np.ndarray) -> np.ndarray:
    """Logits of ``arch`` evaluated directly on (views of) the supernetwork."""
    check_arch(space, arch)
    x = _check_batch(x, space.input_dim)
    logits, _ = _forward(_views(space, params, arch), _block_names(space, arch), x, keep=False)
    return logits


def _cross_entropy(logits: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    n = logits.shape[0]
    loss = -logp[np.arange(n), y].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    return float(loss), dlogits / n


def _check_labels(y, n: int, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {y.shape}")
    if n == 0:
        raise ValueError("loss of an empty batch is undefined")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return y.astype(np.int64)


def subnet_loss_and_grad(
    space: SpaceConfig, w: SubnetWeights, x: np.ndarray, y
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and its gradient w.r.t. every tensor of ``w``."""
    x = _check_batch(x, space.input_dim)
    y = _check_labels(y, x.shape[0], space.num_classes)
    t = w.tensors
    blocks = _block_names(space, w.arch)
    logits, (pre, cache, h) = _forward(t, blocks, x, keep=True)
    loss, dlogits = _cross_entropy(logits, y)

    g: Dict[str, np.ndarray] = {}
    g["head.w"] = h.T @ dlogits
    g["head.b"] = dlogits.sum(axis=0)
    dh = dlogits @ t["head.w"].T
    for p, (h_in, z, a) in zip(reversed(blocks), reversed(cache)):
        g[p + ".w2"] = a.T @ dh
        g[p + ".b2"] = dh.sum(axis=0)
        dz = (dh @ t[p + ".w2"].T) * (z > 0)
        g[p + ".w1"] = h_in.T @ dz
        g[p + ".b1"] = dz.sum(axis=0)
        dh = dh + dz @ t[p + ".w1"].T
    dpre = dh * (pre > 0)
    g["stem.w"] = x.T @ dpre
    g["stem.b"] = dpre.sum(axis=0)
    return loss, {k: g[k] for k in t}


def loss_and_grad(
    space: SpaceConfig, params: Mapping[str, np.ndarray], arch: ArchDescriptor, x: np.ndarray, y
) -> Tuple[float, SubnetWeights]:
    """Loss and gradient of ``arch``; the gradient is shaped like ``extract(params, arch)``."""
    check_arch(space, arch)
    w = SubnetWeights(arch, _views(space, params, arch))
    loss, grads = subnet_loss_and_grad(space, w, x, y)
    return loss, SubnetWeights(arch, grads)


def predict(space: SpaceConfig, params: Mapping[str, np.ndarray], arch: ArchDescriptor, x: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class id."""
    return np.argmax(forward(space, params, arch, x), axis=1)


def params_equal(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> bool:
    return list(a) == list(b) and all(np.array_equal(a[k], b[k]) for k in a)


def max_abs_diff(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> float:
    return max((float(np.max(np.abs(a[k] - b[k]))) if a[k].size else 0.0) for k in a)


def flatten(params: Mapping[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([v.ravel() for v in params.values()]) if params else np.zeros(0)


def total_params(space: SpaceConfig) -> int:
    return sum(math.prod(s) for s in space.tensor_shapes().values())


def params_from(space: SpaceConfig, arrays: Mapping[str, np.ndarray], *, strict: bool = True) -> ParamSet:
    out = {k: np.ascontiguousarray(arrays[k], dtype=np.float64) for k in space.tensor_shapes()}
    if strict:
        check_params(space, out)
    return out
