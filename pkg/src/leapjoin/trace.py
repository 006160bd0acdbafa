"""Evaluation traces and their edit distance.

A trace is the ordered sequence of iterator operations performed during
one evaluation, one event per operation: (iterator, op, depth, from_key,
seek_arg, to_key), with None standing for absent keys and for landing at
the end of a level.

Distance is measured per iterator (events grouped by iterator id, then
summed) with unit-cost inserts and deletes; replacing an event counts as
one delete plus one insert, which is what a line diff of two evaluation
logs would report.
"""

from .keys import render_key

OPEN = "OPEN"
NEXT = "NEXT"
SEEK = "SEEK"
UP = "UP"


def render_event(ev) -> str:
    it, op, depth, frm, arg, to = ev

    def k(x):
        return "-" if x is None else render_key(x)

    to_s = "END" if to is None and op != UP else k(to)
    return f"iter={it} op={op} depth={depth} from={k(frm)} arg={k(arg)} to={to_s}"


def seq_edit_distance(a, b) -> int:
    """Insert/delete edit distance (Myers O(ND) over the stripped middle)."""
    la, lb = len(a), len(b)
    lo = 0
    while lo < la and lo < lb and a[lo] == b[lo]:
        lo += 1
    hi = 0
    while hi < la - lo and hi < lb - lo and a[la - 1 - hi] == b[lb - 1 - hi]:
        hi += 1
    a = a[lo : la - hi]
    b = b[lo : lb - hi]
    n, m = len(a), len(b)
    if n == 0:
        return m
    if m == 0:
        return n
    v = {1: 0}
    for d in range(n + m + 1):
        for k in range(-d, d + 1, 2):
            if k == -d or (k != d and v.get(k - 1, -1) < v.get(k + 1, -1)):
                x = v.get(k + 1, 0)
            else:
                x = v.get(k - 1, 0) + 1
            y = x - k
            while x < n and y < m and a[x] == b[y]:
                x += 1
                y += 1
            v[k] = x
            if x >= n and y >= m:
                return d
    return n + m


def trace_distance(t1, t2) -> int:
    """Sum of per-iterator edit distances between two traces."""
    by_id: dict = {}
    for ev in t1:
        by_id.setdefault(ev[0], ([], []))[0].append(ev)
    for ev in t2:
        by_id.setdefault(ev[0], ([], []))[1].append(ev)
    total = 0
    for sa, sb in by_id.values():
        total += seq_edit_distance(sa, sb)
    return total
