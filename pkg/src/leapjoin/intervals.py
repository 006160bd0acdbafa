"""Interval-tree index over sensitivity records.

A sensitivity record pairs a key interval [lo, hi] with the context in
which the interval was observed: the values of the owning atom's
arguments bound before the indexed one (the prefix) and the values of
other key variables bound earlier in the join order (the context, a
payload for the oracle builder).

Records live in a max-scan tree ordered by (prefix, lo, hi, context);
interval ends aggregate as MAX while interval starts are ordered by the
key itself, so a stabbing query can prune every subtree whose max end is
below the probe or whose min start is above it.
"""

from typing import NamedTuple

from .errors import UserError
from .keys import KEY_MAX, KEY_MIN, render_key
from .scantree import MAX_OP, ScanTree, _SLeaf


class SensitivityRecord(NamedTuple):
    prefix: tuple
    lo: int
    hi: int
    context: tuple

    def sort_key(self):
        return self.prefix + (self.lo, self.hi) + self.context

    def render(self) -> str:
        iv = f"[{render_key(self.lo)},{render_key(self.hi)}]"
        parts = [render_key(k) for k in self.prefix]
        parts.append(iv)
        parts.extend(render_key(k) for k in self.context)
        return parts[0] if len(parts) == 1 else "(" + ", ".join(parts) + ")"


class IntervalIndex:
    def __init__(self, prefix_len: int, context_len: int, leaf_target: int = 12):
        self.prefix_len = prefix_len
        self.context_len = context_len
        self.tree = ScanTree(MAX_OP, leaf_target=leaf_target)
        self.stats = {"visits": 0}

    def __len__(self):
        return self.tree.size

    def _record_of(self, sort_key):
        p = self.prefix_len
        return SensitivityRecord(
            sort_key[:p], sort_key[p], sort_key[p + 1], sort_key[p + 2 :]
        )

    def add(self, rec: SensitivityRecord):
        if rec.lo > rec.hi:
            raise UserError(f"interval lo > hi: {rec}")
        if len(rec.prefix) != self.prefix_len or len(rec.context) != self.context_len:
            raise UserError("sensitivity record shape mismatch")
        key = rec.sort_key()
        if self.tree.get(key) is not None:
            return False  # identical interval already indexed
        self.tree.insert(key, rec.hi)
        return True

    def enumerate(self):
        for key, _ in self.tree.items():
            yield self._record_of(key)

    def stab(self, prefix: tuple, x: int):
        """All records with this prefix whose interval contains x."""
        out = []
        root = self.tree.root
        if root is None:
            return out
        plen = self.prefix_len
        tail = 2 + self.context_len
        plo = prefix + (KEY_MIN,) * tail
        phi = prefix + (KEY_MAX,) * tail
        stats = self.stats

        def visit(node):
            stats["visits"] += 1
            if node.max_key < plo or node.min_key > phi:
                return
            if node.agg < x:
                return  # every interval end in here is below x
            if (
                node.min_key[:plen] == prefix
                and node.max_key[:plen] == prefix
                and node.min_key[plen] > x
            ):
                return  # fully inside the prefix and every start is above x
            if isinstance(node, _SLeaf):
                for key, hi in node.records:
                    if key[:plen] == prefix and key[plen] <= x <= hi:
                        out.append(self._record_of(key))
                return
            visit(node.left)
            visit(node.right)

        visit(root)
        return out

    def stab_and_remove(self, prefix: tuple, x: int):
        hits = self.stab(prefix, x)
        for rec in hits:
            self.tree.erase(rec.sort_key())
        return hits

    def clone(self) -> "IntervalIndex":
        other = IntervalIndex(self.prefix_len, self.context_len)
        other.tree.build_from([(k, v) for k, v in self.tree.items()])
        return other
