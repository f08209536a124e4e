"""Elastic architecture space: descriptors, nesting order, masks and size counts.

The reference supernetwork is a residual multilayer network::

    stem -> [stage 0 blocks] -> ... -> [stage S-1 blocks] -> head

Each stage holds ``base_depth + max_extra_depth`` residual blocks. A
subnetwork activates the first ``base_depth + d_s`` blocks of stage ``s`` and,
for each active block, the first ``m_i = round(ratio_i * max_mid_width)``
hidden units of that block's middle layer. Skipped blocks act as identity.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

Range = Tuple[int, int]
RangeProduct = Tuple[Range, ...]

# MACs count one multiply-accumulate; a FLOP count is 2 * MACs.
FLOPS_PER_MAC = 2


@dataclass(frozen=True)
class SpaceConfig:
    stages: int = 4
    base_depth: int = 2
    max_extra_depth: int = 2
    ratio_choices: Tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    hidden_width: int = 64
    max_mid_width: int = 64
    input_dim: int = 32
    num_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "ratio_choices", tuple(float(r) for r in self.ratio_choices))
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.base_depth < 0 or self.max_extra_depth < 0:
            raise ValueError("base_depth and max_extra_depth must be >= 0")
        if self.blocks_per_stage < 1:
            raise ValueError("each stage needs at least one block")
        rc = self.ratio_choices
        if not rc:
            raise ValueError("ratio_choices must be nonempty")
        if any(not (0.0 < r <= 1.0) for r in rc):
            raise ValueError("ratio_choices must lie in (0, 1]")
        if any(b <= a for a, b in zip(rc, rc[1:])):
            raise ValueError("ratio_choices must be strictly increasing")
        if rc[-1] != 1.0:
            raise ValueError("last ratio choice must be 1.0")
        for name in ("hidden_width", "max_mid_width", "input_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def blocks_per_stage(self) -> int:
        return self.base_depth + self.max_extra_depth

    @property
    def num_blocks(self) -> int:
        return self.stages * self.blocks_per_stage

    def block_index(self, stage: int, pos: int) -> int:
        return stage * self.blocks_per_stage + pos

    def block_prefix(self, stage: int, pos: int) -> str:
        return f"s{stage}.b{pos}"

    def mid_width(self, ratio_index: int) -> int:
        """Middle width for a ratio choice, rounded half-up and at least 1."""
        x = self.ratio_choices[ratio_index] * self.max_mid_width
        return max(1, int(math.floor(x + 0.5)))

    def tensor_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Ordered name -> shape map of every supernetwork tensor."""
        H, M = self.hidden_width, self.max_mid_width
        shapes: Dict[str, Tuple[int, ...]] = {
            "stem.w": (self.input_dim, H),
            "stem.b": (H,),
        }
        for s in range(self.stages):
            for i in range(self.blocks_per_stage):
                p = self.block_prefix(s, i)
                shapes[f"{p}.w1"] = (H, M)
                shapes[f"{p}.b1"] = (M,)
                shapes[f"{p}.w2"] = (M, H)
                shapes[f"{p}.b2"] = (H,)
        shapes["head.w"] = (H, self.num_classes)
        shapes["head.b"] = (self.num_classes,)
        return shapes

    def to_dict(self) -> dict:
        return {
            "stages": self.stages,
            "base_depth": self.base_depth,
            "max_extra_depth": self.max_extra_depth,
            "ratio_choices": list(self.ratio_choices),
            "hidden_width": self.hidden_width,
            "max_mid_width": self.max_mid_width,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
        }


@dataclass(frozen=True)
class ArchDescriptor:
    """One subnetwork: per-stage extra depth plus one ratio index per block.

    Build through :func:`make_arch` so inactive-block ratio indices are zeroed
    and equality/hashing is well defined.
    """

    depths: Tuple[int, ...]
    ratios: Tuple[int, ...]

    def active_blocks(self, space: SpaceConfig) -> Iterator[Tuple[int, int, int]]:
        """Yield (stage, position, global block index) for each active block."""
        for s, d in enumerate(self.depths):
            for i in range(space.base_depth + d):
                yield s, i, space.block_index(s, i)


def make_arch(space: SpaceConfig, depths: Sequence[int], ratios: Sequence[int]) -> ArchDescriptor:
    depths = tuple(int(d) for d in depths)
    ratios = tuple(int(r) for r in ratios)
    if len(depths) != space.stages:
        raise ValueError(f"expected {space.stages} depths, got {len(depths)}")
    if len(ratios) != space.num_blocks:
        raise ValueError(f"expected {space.num_blocks} ratio indices, got {len(ratios)}")
    for d in depths:
        if not 0 <= d <= space.max_extra_depth:
            raise ValueError(f"depth {d} outside [0, {space.max_extra_depth}]")
    for r in ratios:
        if not 0 <= r < len(space.ratio_choices):
            raise ValueError(f"ratio index {r} outside [0, {len(space.ratio_choices)})")
    canon = [0] * space.num_blocks
    for s, d in enumerate(depths):
        for i in range(space.base_depth + d):
            b = space.block_index(s, i)
            canon[b] = ratios[b]
    return ArchDescriptor(depths, tuple(canon))


def check_arch(space: SpaceConfig, arch: ArchDescriptor) -> None:
    """Raise ValueError unless ``arch`` is a canonical descriptor of ``space``."""
    if make_arch(space, arch.depths, arch.ratios) != arch:
        raise ValueError("descriptor is not canonical for this space")


def smallest(space: SpaceConfig) -> ArchDescriptor:
    return make_arch(space, [0] * space.stages, [0] * space.num_blocks)


def largest(space: SpaceConfig) -> ArchDescriptor:
    last = len(space.ratio_choices) - 1
    return make_arch(space, [space.max_extra_depth] * space.stages, [last] * space.num_blocks)


def family_size(space: SpaceConfig) -> int:
    """Number of distinct canonical descriptors in the space.

    Counting ``|ratio_choices| ** num_blocks`` for every depth tuple would
    over-count descriptors that differ only in ratios of inactive blocks, so
    the sum runs over depth tuples with the exponent set to the active block
    count.
    """
    R = len(space.ratio_choices)
    total = 0
    for ds in itertools.product(range(space.max_extra_depth + 1), repeat=space.stages):
        total += R ** (space.stages * space.base_depth + sum(ds))
    return total


def enumerate_family(space: SpaceConfig) -> Iterator[ArchDescriptor]:
    """Yield every canonical descriptor. Only sensible for tiny spaces."""
    R = len(space.ratio_choices)
    for ds in itertools.product(range(space.max_extra_depth + 1), repeat=space.stages):
        active = [space.block_index(s, i) for s, d in enumerate(ds) for i in range(space.base_depth + d)]
        for combo in itertools.product(range(R), repeat=len(active)):
            ratios = [0] * space.num_blocks
            for b, r in zip(active, combo):
                ratios[b] = r
            yield ArchDescriptor(tuple(ds), tuple(ratios))


def is_subarch(space: SpaceConfig, a: ArchDescriptor, b: ArchDescriptor) -> bool:
    """True iff ``a`` is nested inside ``b`` (weights of a are a subset of b's)."""
    check_arch(space, a)
    check_arch(space, b)
    if any(da > db for da, db in zip(a.depths, b.depths)):
        return False
    return all(a.ratios[idx] <= b.ratios[idx] for _, _, idx in a.active_blocks(space))


@dataclass(frozen=True)
class SliceMask:
    """Per tensor, the half-open range products a subnetwork owns.

    Under prefix selection every tensor has either zero or one product.
    """

    ranges: Dict[str, Tuple[RangeProduct, ...]] = field(default_factory=dict)

    def slices(self, name: str) -> List[Tuple[slice, ...]]:
        return [tuple(slice(a, b) for a, b in prod) for prod in self.ranges[name]]

    def covered(self) -> Iterator[Tuple[str, Tuple[slice, ...]]]:
        for name, prods in self.ranges.items():
            for prod in prods:
                yield name, tuple(slice(a, b) for a, b in prod)

    def count(self) -> int:
        return sum(math.prod(b - a for a, b in prod) for prods in self.ranges.values() for prod in prods)

    def to_bool(self, space: SpaceConfig) -> Dict[str, np.ndarray]:
        out = {}
        for name, shape in space.tensor_shapes().items():
            arr = np.zeros(shape, dtype=bool)
            for sl in self.slices(name):
                arr[sl] = True
            out[name] = arr
        return out


def mask(space: SpaceConfig, arch: ArchDescriptor) -> SliceMask:
    check_arch(space, arch)
    H, C, D = space.hidden_width, space.num_classes, space.input_dim
    ranges: Dict[str, Tuple[RangeProduct, ...]] = {
        "stem.w": (((0, D), (0, H)),),
        "stem.b": (((0, H),),),
    }
    active = {idx for _, _, idx in arch.active_blocks(space)}
    for s in range(space.stages):
        for i in range(space.blocks_per_stage):
            p = space.block_prefix(s, i)
            idx = space.block_index(s, i)
            if idx in active:
                m = space.mid_width(arch.ratios[idx])
                ranges[f"{p}.w1"] = (((0, H), (0, m)),)
                ranges[f"{p}.b1"] = (((0, m),),)
                ranges[f"{p}.w2"] = (((0, m), (0, H)),)
                ranges[f"{p}.b2"] = (((0, H),),)
            else:
                for t in ("w1", "b1", "w2", "b2"):
                    ranges[f"{p}.{t}"] = ()
    ranges["head.w"] = (((0, H), (0, C)),)
    ranges["head.b"] = (((0, C),),)
    return SliceMask(ranges)


def param_count(space: SpaceConfig, arch: ArchDescriptor) -> int:
    return mask(space, arch).count()


def macs(space: SpaceConfig, arch: ArchDescriptor) -> int:
    """Per-sample multiply-accumulates of the weight matrices (biases ignored)."""
    check_arch(space, arch)
    H = space.hidden_width
    total = space.input_dim * H + H * space.num_classes
    for _, _, idx in arch.active_blocks(space):
        total += 2 * H * space.mid_width(arch.ratios[idx])
    return total


def flops(space: SpaceConfig, arch: ArchDescriptor) -> int:
    """Per-sample forward FLOPs, ``FLOPS_PER_MAC * macs``."""
    return FLOPS_PER_MAC * macs(space, arch)


def random_arch(space: SpaceConfig, rng: np.random.Generator) -> ArchDescriptor:
    depths = rng.integers(0, space.max_extra_depth + 1, size=space.stages)
    ratios = rng.integers(0, len(space.ratio_choices), size=space.num_blocks)
    return make_arch(space, depths.tolist(), ratios.tolist())


class ArchParseError(ValueError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.text = text
        self.position = position


_DESC_RE = re.compile(r"d:\[(?P<d>[^\]]*)\]\s*[-,]\s*e:\[(?P<e>[^\]]*)\]")
_REPEAT_RE = re.compile(r"^(?P<v>[^x×*]+)[x×*](?P<n>\d+)$")


def format_arch(space: SpaceConfig, arch: ArchDescriptor) -> str:
    d = ",".join(str(x) for x in arch.depths)
    e = ",".join(repr(space.ratio_choices[r]) for r in arch.ratios)
    return f"d:[{d}]-e:[{e}]"


def _match_ratio(space: SpaceConfig, value: float) -> Optional[int]:
    for i, r in enumerate(space.ratio_choices):
        if abs(r - value) <= 1e-9:
            return i
    return None


def parse_arch(space: SpaceConfig, text: str) -> ArchDescriptor:
    """Parse ``d:[..]-e:[..]``; ``v×n`` (or ``vxn``) inside ``e`` repeats a ratio.

    The shortcuts ``smallest`` and ``largest`` are also accepted.
    """
    stripped = text.strip()
    if stripped == "smallest":
        return smallest(space)
    if stripped == "largest":
        return largest(space)
    m = _DESC_RE.fullmatch(stripped)
    offset = len(text) - len(text.lstrip())
    if m is None:
        pos = 0 if not stripped.startswith("d:[") else stripped.find("]") + 1
        raise ArchParseError("expected 'd:[...]-e:[...]'", text, offset + max(pos, 0))

    depths: List[int] = []
    start = offset + m.start("d")
    for tok, pos in _tokens(m.group("d"), start):
        try:
            depths.append(int(tok))
        except ValueError:
            raise ArchParseError(f"bad depth {tok!r}", text, pos) from None

    ratios: List[int] = []
    start = offset + m.start("e")
    for tok, pos in _tokens(m.group("e"), start):
        rep = _REPEAT_RE.match(tok)
        val, n = (rep.group("v"), int(rep.group("n"))) if rep else (tok, 1)
        try:
            idx = _match_ratio(space, float(val))
        except ValueError:
            raise ArchParseError(f"bad ratio {tok!r}", text, pos) from None
        if idx is None:
            raise ArchParseError(f"ratio {val} not in {list(space.ratio_choices)}", text, pos)
        ratios.extend([idx] * n)

    if len(depths) != space.stages:
        raise ArchParseError(f"expected {space.stages} depths, got {len(depths)}", text, offset + m.start("d"))
    if len(ratios) != space.num_blocks:
        raise ArchParseError(f"expected {space.num_blocks} ratios, got {len(ratios)}", text, offset + m.start("e"))
    bad = [i for i, d in enumerate(depths) if not 0 <= d <= space.max_extra_depth]
    if bad:
        raise ArchParseError(f"depth {depths[bad[0]]} out of range", text, offset + m.start("d"))
    return make_arch(space, depths, ratios)


def _tokens(body: str, start: int) -> Iterator[Tuple[str, int]]:
    pos = 0
    if not body.strip():
        return
    for raw in body.split(","):
        lead = len(raw) - len(raw.lstrip())
        yield raw.strip(), start + pos + lead
        pos += len(raw) + 1
