"""Per-layer key/value storage plus cache-size accounting.

Local layers keep a ring buffer of the last `window` entries; Global layers
keep everything up to max_context. Absolute positions are stored alongside
entries so rotary embeddings and window masks stay correct after eviction.

A cache instance has a single owner and is not thread-safe; separate
generation streams each get their own cache.
"""

from typing import Optional, Sequence

import numpy as np

from .attention import LayerKind
from .errors import CapacityError, OrderingError


class KvCache:
    """Bounded per-layer K/V store keyed by absolute token position."""

    def __init__(
        self,
        layer_kinds: Sequence[LayerKind],
        window: int,
        max_context: int,
        num_kv_heads: int,
        head_dim: int,
    ):
        self.layer_kinds = list(layer_kinds)
        self.window = window
        self.max_context = max_context
        self.num_kv_heads = num_kv_heads
        self.head_dim = head_dim
        self._caps = [
            window if kind is LayerKind.LOCAL else max_context for kind in self.layer_kinds
        ]
        self._keys = [np.zeros((c, num_kv_heads, head_dim)) for c in self._caps]
        self._values = [np.zeros((c, num_kv_heads, head_dim)) for c in self._caps]
        self._positions = [np.full(c, -1, dtype=np.int64) for c in self._caps]
        self._next_pos = [0] * len(self.layer_kinds)

    def __len__(self) -> int:
        return self.next_pos

    @property
    def next_pos(self) -> int:
        # all layers advance in lockstep; a partially appended step is a bug
        first = self._next_pos[0] if self._next_pos else 0
        if any(p != first for p in self._next_pos):
            raise OrderingError(f"layers disagree on next position: {self._next_pos}")
        return first

    def append(self, layer: int, k: np.ndarray, v: np.ndarray, pos: int) -> None:
        """Store one token's K/V for a layer; pos must be the layer's next position."""
        if pos != self._next_pos[layer]:
            raise OrderingError(
                f"layer {layer} expected position {self._next_pos[layer]}, got {pos}"
            )
        cap = self._caps[layer]
        if self.layer_kinds[layer] is LayerKind.GLOBAL and pos >= cap:
            raise CapacityError(f"global layer {layer} is full at {cap} entries")
        slot = pos % cap  # ring for local layers; never wraps for global
        self._keys[layer][slot] = k
        self._values[layer][slot] = v
        self._positions[layer][slot] = pos
        self._next_pos[layer] = pos + 1

    def view(self, layer: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stored (keys, values, positions) in increasing position order.

        keys/values: (n, num_kv_heads, head_dim), positions: (n,).
        """
        if self._next_pos[layer] == 0:
            empty = np.zeros((0, self.num_kv_heads, self.head_dim))
            return empty, empty.copy(), np.zeros(0, dtype=np.int64)
        filled = self._positions[layer] >= 0
        order = np.argsort(self._positions[layer][filled])
        return (
            self._keys[layer][filled][order],
            self._values[layer][filled][order],
            self._positions[layer][filled][order],
        )


def kv_bytes(
    pattern: Sequence[LayerKind],
    context: int,
    num_kv_heads: int,
    head_dim: int,
    bytes_per_elem: float,
    window: int,
) -> dict:
    """Cache footprint at a given context length.

    Each global layer holds `context` entries, each local layer
    min(context, window); the factor 2 counts keys and values. No
    per-entry metadata is modeled.
    """
    if context < 1:
        raise ValueError(f"context must be >= 1, got {context}")
    per_layer = []
    for kind in pattern:
        tokens = context if kind is LayerKind.GLOBAL else min(context, window)
        per_layer.append(2 * tokens * num_kv_heads * head_dim * bytes_per_elem)
    return {"per_layer": per_layer, "total": sum(per_layer)}


def kv_curve(
    pattern: Sequence[LayerKind],
    num_kv_heads: int,
    head_dim: int,
    bytes_per_elem: float,
    contexts: Sequence[int],
    window: int,
) -> list[tuple[int, float]]:
    """kv_bytes evaluated at each context, for plotting or CSV export."""
    contexts = list(contexts)
    if any(b > a for a, b in zip(contexts[1:], contexts)):
        raise ValueError("contexts must be ascending")
    return [
        (c, kv_bytes(pattern, c, num_kv_heads, head_dim, bytes_per_elem, window)["total"])
        for c in contexts
    ]


def kv_curve_csv(points: Sequence[tuple[int, float]]) -> str:
    lines = ["context,bytes"]
    lines += [f"{c},{b:.0f}" for c, b in points]
    return "\n".join(lines) + "\n"
