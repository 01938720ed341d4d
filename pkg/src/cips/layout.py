"""Encoding of one causal role's columns into a numeric block.

Within a block, columns are ordered continuous first, then binary, then one
one-hot group per nominal/ordinal column.  Decoder heads follow the same
grouping: Gaussian (mean, raw variance) per continuous column, one logit per
binary column and ``K`` logits per categorical column.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class RoleLayout:
    role: str
    continuous: tuple[int, ...]
    binary: tuple[int, ...]
    categorical: tuple[tuple[int, int], ...]  # (column index, number of categories)

    @classmethod
    def from_schema(cls, schema, role: str) -> "RoleLayout":
        cont, binary, cat = [], [], []
        for j, spec in enumerate(schema):
            if spec.role != role:
                continue
            if spec.kind == "continuous":
                cont.append(j)
            elif spec.kind == "binary":
                binary.append(j)
            else:
                cat.append((j, len(spec.categories)))
        return cls(role, tuple(cont), tuple(binary), tuple(cat))

    @property
    def n_cont(self) -> int:
        return len(self.continuous)

    @property
    def n_bin(self) -> int:
        return len(self.binary)

    @property
    def width(self) -> int:
        return self.n_cont + self.n_bin + sum(k for _, k in self.categorical)

    @property
    def head_width(self) -> int:
        """Decoder output width for this block."""
        return 2 * self.n_cont + self.n_bin + sum(k for _, k in self.categorical)

    def encode(self, values: np.ndarray) -> np.ndarray:
        """Encode rows of a full value matrix; every used cell must be filled."""
        n = values.shape[0]
        parts = [values[:, list(self.continuous)], values[:, list(self.binary)]]
        for j, k in self.categorical:
            col = values[:, j]
            parts.append((col[:, None] == np.arange(k)[None, :]).astype(float))
        out = np.hstack(parts) if parts else np.empty((n, 0))
        out = out.reshape(n, self.width)
        if not np.all(np.isfinite(out)):
            raise DomainError(f"{self.role} block has missing or non-finite cells")
        return out


def encode_features(ds, roles=("confounder", "adjustment", "treatment")) -> np.ndarray:
    """Concatenated encoded blocks for the given roles (baseline design matrix)."""
    blocks = [RoleLayout.from_schema(ds.schema, r).encode(ds.values) for r in roles]
    return np.hstack(blocks)
