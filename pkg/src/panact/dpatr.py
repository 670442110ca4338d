"""Multi-granular activity reasoning over individuals, groups, and the scene.

The dual-path stack alternates a global pass (learnable scene token plus all
individuals) with a social pass (learnable group token plus each group's
members) in every layer.  Single-block parallel / hierarchical / reverse
variants are provided for structure comparisons.
"""

from __future__ import annotations

import numpy as np

from .nn import EncoderBlock, Linear, Module, parameter
from .relation import GroupAssignment
from .tensor import ShapeError, Tensor, concat, gather_rows

STRUCTURES = ("dpatr", "parallel", "hierarchical", "reverse")


class TokenBank(Module):
    """Learnable scene-level and group-level prototype tokens."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.global_token = parameter(rng.normal(scale=0.02, size=(1, dim)))
        self.social_token = parameter(rng.normal(scale=0.02, size=(1, dim)))

    def social_tokens(self, count: int) -> Tensor:
        return gather_rows(self.social_token, np.zeros(count, dtype=np.intp))


def _group_indices(groups: GroupAssignment) -> list[np.ndarray]:
    indices = [groups.members(g) for g in range(1, groups.n_groups + 1)]
    for g, idx in enumerate(indices, start=1):
        if idx.size == 0:
            raise ValueError(f"group {g} has no members; repair assignments upstream")
    return indices


def _social_pass(block: EncoderBlock, x: Tensor, tokens: Tensor,
                 indices: list[np.ndarray]) -> tuple[Tensor, Tensor]:
    """Run `block` over [token_k; members of group k] per group.

    Returns member outputs scattered back to their original rows and the
    updated per-group tokens.
    """
    token_rows = []
    member_rows = []
    order = np.concatenate(indices)
    for g, idx in enumerate(indices):
        seq = concat([tokens[g:g + 1], gather_rows(x, idx)], axis=0)
        out = block(seq)
        token_rows.append(out[0:1])
        member_rows.append(out[1:])
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    scattered = gather_rows(concat(member_rows, axis=0), inverse)
    return scattered, concat(token_rows, axis=0)


class DualPathLayer(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ffn_mult: int = 4):
        self.global_block = EncoderBlock(dim, heads, rng, ffn_mult)
        self.social_block = EncoderBlock(dim, heads, rng, ffn_mult)

    def __call__(self, x: Tensor, global_token: Tensor, social_tokens: Tensor,
                 groups: GroupAssignment) -> tuple[Tensor, Tensor, Tensor]:
        if x.shape[0] != groups.labels.shape[0]:
            raise ShapeError(
                f"{x.shape[0]} individuals vs {groups.labels.shape[0]} group labels"
            )
        seq = concat([global_token, x], axis=0)
        out = self.global_block(seq)
        new_global = out[0:1]
        intermediate = out[1:]
        indices = _group_indices(groups)
        new_x, new_social = _social_pass(self.social_block, intermediate,
                                         social_tokens, indices)
        return new_x, new_global, new_social


class DualPathTransformer(Module):
    def __init__(self, dim: int, heads: int, layers: int, rng: np.random.Generator,
                 ffn_mult: int = 4):
        if layers < 1:
            raise ShapeError("need at least one layer")
        self.tokens = TokenBank(dim, rng)
        self.layers = [DualPathLayer(dim, heads, rng, ffn_mult) for _ in range(layers)]

    def __call__(self, pooled: Tensor,
                 groups: GroupAssignment) -> tuple[Tensor, Tensor, Tensor]:
        x = pooled
        g = self.tokens.global_token
        s = self.tokens.social_tokens(groups.n_groups)
        for layer in self.layers:
            x, g, s = layer(x, g, s, groups)
        return x, s, g.reshape((g.shape[1],))


class TriBlockStructure(Module):
    """Three single-purpose encoder blocks wired per `variant`.

    parallel: each block reads the raw pooled features independently.
    hierarchical: individual -> social (on individual outputs) -> global
    (on social tokens + individual outputs).
    reverse: global -> social (on globally-attended members) -> individual.
    """

    def __init__(self, dim: int, heads: int, variant: str, rng: np.random.Generator,
                 ffn_mult: int = 4):
        if variant not in ("parallel", "hierarchical", "reverse"):
            raise ShapeError(f"unknown structure variant {variant!r}")
        self.variant = variant
        self.tokens = TokenBank(dim, rng)
        self.individual_block = EncoderBlock(dim, heads, rng, ffn_mult)
        self.social_block = EncoderBlock(dim, heads, rng, ffn_mult)
        self.global_block = EncoderBlock(dim, heads, rng, ffn_mult)

    def __call__(self, pooled: Tensor,
                 groups: GroupAssignment) -> tuple[Tensor, Tensor, Tensor]:
        indices = _group_indices(groups)
        social = self.tokens.social_tokens(groups.n_groups)
        g = self.tokens.global_token

        if self.variant == "parallel":
            ind = self.individual_block(pooled)
            _, soc = _social_pass(self.social_block, pooled, social, indices)
            glb = self.global_block(concat([g, pooled], axis=0))[0:1]
        elif self.variant == "hierarchical":
            ind = self.individual_block(pooled)
            _, soc = _social_pass(self.social_block, ind, social, indices)
            glb = self.global_block(concat([g, soc, ind], axis=0))[0:1]
        else:  # reverse
            out = self.global_block(concat([g, pooled], axis=0))
            glb = out[0:1]
            members, soc = _social_pass(self.social_block, out[1:], social, indices)
            ind = self.individual_block(members)
        return ind, soc, glb.reshape((glb.shape[1],))


class ActivityHeads(Module):
    """Per-granularity linear classifiers with sigmoid scores."""

    def __init__(self, dim: int, n_individual: int, n_social: int, n_global: int,
                 rng: np.random.Generator):
        self.individual = Linear(dim, n_individual, rng)
        self.social = Linear(dim, n_social, rng)
        self.global_ = Linear(dim, n_global, rng)

    def __call__(self, individuals: Tensor, socials: Tensor,
                 scene: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        y_idv = self.individual(individuals).sigmoid()
        y_sg = self.social(socials).sigmoid()
        y_glb = self.global_(scene.reshape((1, scene.shape[0]))).sigmoid()
        return y_idv, y_sg, y_glb.reshape((y_glb.shape[1],))


def predict_sets(scores: np.ndarray, threshold: float = 0.5) -> list[set[int]]:
    """Multi-label decision: class is positive when its score exceeds 0.5."""
    arr = np.atleast_2d(np.asarray(scores))
    return [set(np.flatnonzero(row > threshold).tolist()) for row in arr]
