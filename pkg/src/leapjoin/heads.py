"""Head predicate maintenance.

Assignment deltas reach a head in one of five regimes:

* direct -- projection-free rules insert/remove head records 1:1;
* counted -- projected rules keep a support count per head key, dropping
  the record when it reaches zero (erases apply before inserts per key,
  so a changed function value never conflicts with itself);
* group sum -- 64-bit wrapping totals adjusted by the summand or its
  negation, plus a support count;
* scan-backed min/max -- an intermediate full-key relation with a
  min/max scan-tree; touched group prefixes recompute by range scan;
* exact float totals -- group sums whose accumulator is a segmented
  exact representation of X + sum(s_i), X a fixed constant with a 1-bit
  every fourth position, so borrows stay local and the running total is
  exact regardless of insert/erase order.
"""

import math
from fractions import Fraction

from .errors import IntegrityError, UserError
from .keys import KEY_MAX, KEY_MIN
from .scantree import EMPTY, ScanTree, wrap64
from .store import INSERT

_SEG_BITS = 52
_SEG_BASE = 1 << _SEG_BITS
_X_LOW_BIT = -2048  # X = sum of 2**(4k) for k in -512..512
_X_HIGH_BIT = 2048


def x_segment(j: int) -> int:
    """Bits [52j, 52j+52) of the reference constant X."""
    lo = max(52 * j, _X_LOW_BIT)
    hi = min(52 * j + 51, _X_HIGH_BIT)
    seg = 0
    p = lo + (-lo) % 4
    while p <= hi:
        seg |= 1 << (p - 52 * j)
        p += 4
    return seg


class SegmentedFloat:
    """Exact accumulator for signed double-precision summands.

    Stores only the 52-bit segments of X + sum(s_i) that differ from X's
    own segments.  Adding one summand touches the two segments it spans
    plus however far its carry ripples; X's regular 1-bits stop a ripple
    at the first clean segment.
    """

    __slots__ = ("segments",)

    def __init__(self, segments=None):
        self.segments = dict(segments) if segments else {}

    def frozen(self):
        return tuple(sorted(self.segments.items()))

    def is_zero(self):
        return not self.segments

    def add(self, s: float, sign: int = 1) -> int:
        """Add (sign=+1) or subtract (sign=-1) a finite double exactly.

        Returns the number of segments written.
        """
        if not math.isfinite(s):
            raise UserError(f"non-finite summand {s!r}")
        if s == 0.0:
            return 0
        frac, exp = math.frexp(s)
        m = int(frac * (1 << 53))  # exact: frac has <= 53 significant bits
        e = exp - 53
        if sign < 0:
            m = -m
        j, shift = divmod(e, _SEG_BITS)
        return self._add_at(j, m << shift)

    def _add_at(self, j: int, delta: int) -> int:
        touched = 0
        segs = self.segments
        while delta:
            ref = x_segment(j)
            cur = segs.get(j, ref)
            carry, new = divmod(cur + delta, _SEG_BASE)
            if new == ref:
                segs.pop(j, None)
            else:
                segs[j] = new
            touched += 1
            j += 1
            delta = carry
        return touched

    def to_exact(self) -> Fraction:
        """The represented total as an exact rational."""
        if not self.segments:
            return Fraction(0)
        jmin = min(self.segments)
        num = 0
        for j, seg in self.segments.items():
            num += (seg - x_segment(j)) << (_SEG_BITS * (j - jmin))
        e = _SEG_BITS * jmin
        if e >= 0:
            return Fraction(num * (1 << e))
        return Fraction(num, 1 << -e)

    def to_float(self):
        """Round the exact total to the nearest double (ties to even).

        Returns (value, overflowed); an exact total beyond the double
        range comes back as a signed infinity with the flag set.
        """
        if not self.segments:
            return 0.0, False
        exact = self.to_exact()
        try:
            return float(exact), False
        except OverflowError:
            return (math.inf if exact > 0 else -math.inf), True


# -- update actions ----------------------------------------------------------


def _set_value(txn, keys, value):
    cur = txn.lookup(keys)
    if cur is not None:
        if cur[0] == value:
            return
        txn.erase(keys)
    txn.insert(keys, value)


def apply_direct(txn, deltas):
    """1:1 head updates for projection-free rules."""
    for keys, value, delta in deltas:
        if delta == INSERT:
            if txn.lookup(keys) is not None:
                raise IntegrityError(
                    f"{txn.relation.name}: direct insert of live record {keys}"
                )
            txn.insert(keys, value)
        else:
            cur = txn.lookup(keys)
            if cur is None or cur[0] != value:
                raise IntegrityError(
                    f"{txn.relation.name}: direct erase of absent record {keys}"
                )
            txn.erase(keys)


def apply_counted(txn, deltas, func_payload: bool):
    """Support-counted updates.

    Relation heads (and count aggregations) store eta as the record
    value; function heads store (value, eta).  Deltas must order erases
    before inserts per key.
    """
    name = txn.relation.name
    for keys, payload, delta in deltas:
        cur = txn.lookup(keys)
        if delta == INSERT:
            if cur is None:
                _set_value(txn, keys, (payload, 1) if func_payload else 1)
            elif func_payload:
                value, eta = cur[0]
                if value != payload:
                    raise IntegrityError(
                        f"{name}: functional dependency violated at {keys}: "
                        f"{value!r} vs {payload!r}"
                    )
                _set_value(txn, keys, (value, eta + 1))
            else:
                _set_value(txn, keys, cur[0] + 1)
        else:
            if cur is None:
                raise IntegrityError(f"{name}: support underflow at {keys}")
            if func_payload:
                value, eta = cur[0]
                if value != payload:
                    raise IntegrityError(
                        f"{name}: erase of unknown value at {keys}"
                    )
                if eta == 1:
                    txn.erase(keys)
                else:
                    _set_value(txn, keys, (value, eta - 1))
            else:
                if cur[0] == 1:
                    txn.erase(keys)
                else:
                    _set_value(txn, keys, cur[0] - 1)


def apply_group_sum(txn, deltas):
    """Abelian-group totals over 64-bit wrapping integers."""
    name = txn.relation.name
    for keys, summand, delta in deltas:
        if not isinstance(summand, int):
            raise UserError(f"{name}: sum() needs integer summands, got {summand!r}")
        cur = txn.lookup(keys)
        if delta == INSERT:
            if cur is None:
                _set_value(txn, keys, (wrap64(summand), 1))
            else:
                total, eta = cur[0]
                _set_value(txn, keys, (wrap64(total + summand), eta + 1))
        else:
            if cur is None:
                raise IntegrityError(f"{name}: support underflow at {keys}")
            total, eta = cur[0]
            if eta == 1:
                txn.erase(keys)
            else:
                _set_value(txn, keys, (wrap64(total - summand), eta - 1))


def apply_float_total(txn, deltas):
    """Exact float totals: (frozen segments, eta) per group."""
    name = txn.relation.name
    for keys, summand, delta in deltas:
        summand = float(summand)
        cur = txn.lookup(keys)
        if delta == INSERT:
            if cur is None:
                acc = SegmentedFloat()
                acc.add(summand)
                _set_value(txn, keys, (acc.frozen(), 1))
            else:
                segs, eta = cur[0]
                acc = SegmentedFloat(segs)
                acc.add(summand)
                _set_value(txn, keys, (acc.frozen(), eta + 1))
        else:
            if cur is None:
                raise IntegrityError(f"{name}: support underflow at {keys}")
            segs, eta = cur[0]
            if eta == 1:
                txn.erase(keys)
            else:
                acc = SegmentedFloat(segs)
                acc.add(summand, sign=-1)
                _set_value(txn, keys, (acc.frozen(), eta - 1))


class ScanBackedAggregate:
    """Intermediate full-key relation with a min/max scan-tree.

    The same intermediate can serve several heads grouping by different
    key-prefix lengths (apply the deltas once, refresh each head).
    """

    def __init__(self, op, arity):
        self.tree = ScanTree(op)
        self.arity = arity

    def apply_deltas(self, deltas):
        touched = set()
        for keys, value, delta in deltas:
            if delta == INSERT:
                try:
                    self.tree.insert(keys, value)
                except UserError:
                    raise IntegrityError(
                        f"aggregate insert of live record {keys}"
                    ) from None
            else:
                cur = self.tree.get(keys)
                if cur is None or cur[0] != value:
                    raise IntegrityError(f"aggregate erase of absent record {keys}")
                self.tree.erase(keys)
            touched.add(keys)
        return touched

    def refresh_head(self, txn, touched, prefix_len):
        pad = self.arity - prefix_len
        for full_keys in sorted({k[:prefix_len] for k in touched}):
            lo = full_keys + (KEY_MIN,) * pad
            hi = full_keys + (KEY_MAX,) * pad
            agg = self.tree.range_scan(lo, hi)
            if agg is EMPTY:
                if txn.lookup(full_keys) is not None:
                    txn.erase(full_keys)
            else:
                _set_value(txn, full_keys, agg)


def apply_semigroup(agg: ScanBackedAggregate, txn, deltas, prefix_len: int):
    touched = agg.apply_deltas(deltas)
    agg.refresh_head(txn, touched, prefix_len)
