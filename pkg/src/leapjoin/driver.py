"""The maintenance cycle.

bootstrap: full-evaluate the rule, populate heads from the assignment
stream and sensitivity indices from the recorded iterator transitions.

maintain: turn version deltas into trie surgeries, match them against
the sensitivity indices (consuming every hit) to build the change
oracle, evaluate the body over the old and the new versions restricted
by the oracle, diff the two assignment streams in key order, route the
differences to each head's update action, and let the new-side
evaluation refill the indices for the next round.

Atoms whose key arguments prefix the join order carry no indices; their
surgeries contribute their own key as a point interval, which names the
changed region directly in join-order coordinates.
"""

from bisect import bisect_right
from dataclasses import dataclass

from .errors import UserError
from .heads import (
    ScanBackedAggregate,
    apply_counted,
    apply_direct,
    apply_float_total,
    apply_group_sum,
    apply_semigroup,
)
from .intervals import IntervalIndex
from .keys import render_key
from .lftj import Counter, SensitivityRecorder, evaluate
from .scantree import MAX_OP, MIN_OP
from .store import ERASE, INSERT, surgery_iter


@dataclass
class MaintenanceReport:
    ops_old: int = 0
    ops_new: int = 0
    oracle_intervals: int = 0
    sens_consumed: int = 0
    sens_added: int = 0
    head_inserts: int = 0
    head_erases: int = 0

    def to_text(self) -> str:
        return "\n".join(
            f"{name}={getattr(self, name)}"
            for name in (
                "ops_old",
                "ops_new",
                "oracle_intervals",
                "sens_consumed",
                "sens_added",
                "head_inserts",
                "head_erases",
            )
        )


def _merge_intervals(pairs):
    out = []
    for lo, hi in sorted(pairs):
        if out and lo <= out[-1][1] + 1:
            if hi > out[-1][1]:
                out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    return out


class OracleEntry:
    __slots__ = ("merged", "admit")

    def __init__(self, merged, admit):
        self.merged = merged
        self.admit = admit

    def admits(self, k) -> bool:
        i = bisect_right(self.admit, (k, float("inf")))
        return i > 0 and self.admit[i - 1][1] >= k

    def render(self) -> str:
        return (
            "{"
            + ", ".join(f"[{render_key(a)},{render_key(b)}]" for a, b in self.merged)
            + "}"
        )


class ChangeOracle:
    """Per-depth merged interval sets keyed by the bound key prefix.

    An interval at depth d admits every deeper binding under it; the
    prefixes of deeper contributions surface at shallower depths as
    point intervals so the evaluator can reach them.
    """

    def __init__(self, depth_count: int):
        self.depth_count = depth_count
        self._admit = {}  # (depth, prefix) -> [(lo, hi)]
        self._points = {}  # (depth, prefix) -> set of keys
        self._entries = None

    def add(self, depth, bound_prefix, lo, hi):
        self._admit.setdefault((depth, bound_prefix), []).append((lo, hi))
        for d in range(1, depth):
            self._points.setdefault((d, bound_prefix[: d - 1]), set()).add(
                bound_prefix[d - 1]
            )

    def finalize(self):
        entries = {}
        for key in set(self._admit) | set(self._points):
            admit = _merge_intervals(self._admit.get(key, ()))
            pts = [(p, p) for p in self._points.get(key, ())]
            merged = _merge_intervals(admit + pts)
            entries[key] = OracleEntry(merged, admit)
        self._entries = entries
        return self

    def entry(self, depth, prefix):
        return self._entries.get((depth, prefix))

    def is_empty(self) -> bool:
        return not self._entries

    def interval_count(self) -> int:
        return sum(len(e.merged) for e in self._entries.values())

    def render_lines(self):
        for (depth, prefix), e in sorted(self._entries.items()):
            ptxt = "(" + ",".join(render_key(k) for k in prefix) + ")"
            yield f"oracle depth={depth} prefix={ptxt} {e.render()}"


class HeadState:
    """One head atom's store plus its update action."""

    def __init__(self, head_plan, relation, key_depth_count):
        self.plan = head_plan
        self.relation = relation
        self.kind = head_plan.kind
        self.is_func_atom = bool(head_plan.atom.value_args)
        if self.kind in ("MIN", "MAX"):
            op = MAX_OP if self.kind == "MAX" else MIN_OP
            self.agg = ScanBackedAggregate(op, key_depth_count)
        else:
            self.agg = None

    def reset(self):
        txn = self.relation.begin()
        for keys, _ in self.relation.current.records():
            txn.erase(keys)
        txn.commit()
        if self.agg is not None:
            self.agg = ScanBackedAggregate(self.agg.tree.op, self.agg.arity)

    def extract(self, assignment):
        keys, values = assignment

        def fetch(src):
            tag, i = src
            return keys[i - 1] if tag == "k" else values[i]

        hk = tuple(fetch(s) for s in self.plan.key_sources)
        payload = None
        if self.plan.value_source is not None:
            payload = fetch(self.plan.value_source)
        if self.kind in ("MIN", "MAX"):
            return (keys, payload)  # intermediate is keyed by the full binding
        if self.kind == "COUNTED" and not self.is_func_atom:
            payload = None
        return (hk, payload)

    def apply(self, deltas):
        """Apply (target_keys, payload, delta) updates; erases first per key."""
        deltas = sorted(deltas, key=lambda d: (d[0], d[2] != ERASE))
        txn = self.relation.begin()
        try:
            if self.kind == "DIRECT":
                apply_direct(txn, deltas)
            elif self.kind == "COUNTED":
                apply_counted(txn, deltas, func_payload=self.is_func_atom)
            elif self.kind == "COUNT":
                apply_counted(txn, deltas, func_payload=False)
            elif self.kind == "GROUP_SUM":
                apply_group_sum(txn, deltas)
            elif self.kind == "FLOAT_TOTAL":
                apply_float_total(txn, deltas)
            else:
                apply_semigroup(self.agg, txn, deltas, len(self.plan.key_sources))
        except BaseException:
            txn.abort()
            raise
        txn.commit()


class RuleInstance:
    def __init__(self, plan, head_relations):
        if len(head_relations) != len(plan.heads):
            raise UserError("one head relation per head atom")
        self.plan = plan
        self.heads = [
            HeadState(hp, rel, len(plan.key_order))
            for hp, rel in zip(plan.heads, head_relations)
        ]
        self.indices = {}
        self.bound_versions = None
        self.bootstrapped = False
        self.last_trace = None
        self.last_oracle = None

    def fresh_indices(self):
        return {
            key: IntervalIndex(plen, clen)
            for key, (plen, clen) in self.plan.index_specs.items()
        }

    def current_versions(self, relations):
        return {
            ap.atom.pred: relations[ap.atom.pred].current
            for bp in self.plan.branches
            for ap in bp.atoms
        }


def _assemble_prefix(ap, lvl, rec):
    d = ap.depths[lvl - 1]
    arr = [None] * (d - 1)
    for i, ad in enumerate(ap.depths[: lvl - 1]):
        arr[ad - 1] = rec.prefix[i]
    for i, cd in enumerate(ap.context_depths[lvl - 1]):
        arr[cd - 1] = rec.context[i]
    return tuple(arr)


def build_oracle(inst, old_versions, new_versions, consume=True):
    """Match tree surgeries against the sensitivity indices."""
    plan = inst.plan
    oracle = ChangeOracle(len(plan.key_order))
    consumed = 0
    for bi, bp in enumerate(plan.branches):
        for pos, ap in enumerate(bp.atoms):
            pred = ap.atom.pred
            old, new = old_versions[pred], new_versions[pred]
            if old is new or old.version_id == new.version_id:
                continue
            for surg in surgery_iter(old, new):
                lvl = surg.depth
                k = surg.prefix[-1]
                alpha = surg.prefix[:-1]
                idx = inst.indices.get((bi, pos, lvl))
                if idx is not None:
                    hits = (
                        idx.stab_and_remove(alpha, k)
                        if consume
                        else idx.stab(alpha, k)
                    )
                    consumed += len(hits)
                    d = ap.depths[lvl - 1]
                    for rec in hits:
                        oracle.add(d, _assemble_prefix(ap, lvl, rec), rec.lo, rec.hi)
                elif ap.exempt[lvl - 1]:
                    # args prefix the join order: the surgery names its own
                    # position in order coordinates
                    oracle.add(ap.depths[lvl - 1], alpha, k, k)
                else:
                    raise UserError(
                        f"no sensitivity index for {ap.name} level {lvl}"
                    )
    oracle.finalize()
    return oracle, consumed


def _route(inst, stream, delta, out):
    n = 0
    for assignment in stream:
        n += 1
        for i, head in enumerate(inst.heads):
            target, payload = head.extract(assignment)
            out[i].append((target, payload, delta))
    return n


def _diff_route(inst, old_stream, new_stream, out):
    inserts = erases = 0
    a = next(old_stream, None)
    b = next(new_stream, None)
    while a is not None or b is not None:
        if b is None or (a is not None and a < b):
            erases += 1
            for i, head in enumerate(inst.heads):
                target, payload = head.extract(a)
                out[i].append((target, payload, ERASE))
            a = next(old_stream, None)
        elif a is None or b < a:
            inserts += 1
            for i, head in enumerate(inst.heads):
                target, payload = head.extract(b)
                out[i].append((target, payload, INSERT))
            b = next(new_stream, None)
        else:
            a = next(old_stream, None)
            b = next(new_stream, None)
    return inserts, erases


def bootstrap(inst, versions, with_trace=True):
    """Full evaluation: fills heads and fresh sensitivity indices."""
    plan = inst.plan
    inst.indices = inst.fresh_indices()
    recorder = SensitivityRecorder(inst.indices)
    counter = Counter()
    trace = [] if with_trace else None
    for head in inst.heads:
        if head.relation.current.count:
            head.reset()
    per_head = [[] for _ in inst.heads]
    n = _route(
        inst,
        evaluate(plan, versions, recorder=recorder, trace=trace, counter=counter),
        INSERT,
        per_head,
    )
    for head, deltas in zip(inst.heads, per_head):
        head.apply(deltas)
    inst.bound_versions = dict(versions)
    inst.bootstrapped = True
    inst.last_trace = trace
    inst.last_oracle = None
    return MaintenanceReport(
        ops_new=counter.ops,
        sens_added=recorder.added,
        head_inserts=n,
    )


def maintain(inst, new_versions, use_oracle=True, with_trace=False):
    """One maintenance round against the currently bound versions."""
    if not inst.bootstrapped:
        raise UserError("rule has not been evaluated yet: run eval first")
    plan = inst.plan
    old_versions = inst.bound_versions
    oracle = None
    consumed = 0
    if use_oracle:
        oracle, consumed = build_oracle(inst, old_versions, new_versions)
    recorder = SensitivityRecorder(inst.indices)
    c_old, c_new = Counter(), Counter()
    trace = [] if with_trace else None
    old_stream = evaluate(plan, old_versions, oracle=oracle, counter=c_old)
    new_stream = evaluate(
        plan,
        new_versions,
        oracle=oracle,
        recorder=recorder,
        counter=c_new,
        trace=trace,
    )
    per_head = [[] for _ in inst.heads]
    inserts, erases = _diff_route(inst, old_stream, new_stream, per_head)
    for head, deltas in zip(inst.heads, per_head):
        head.apply(deltas)
    inst.bound_versions = dict(new_versions)
    if trace is not None:
        inst.last_trace = trace
    inst.last_oracle = oracle
    return MaintenanceReport(
        ops_old=c_old.ops,
        ops_new=c_new.ops,
        oracle_intervals=oracle.interval_count() if oracle is not None else 0,
        sens_consumed=consumed,
        sens_added=recorder.added,
        head_inserts=inserts,
        head_erases=erases,
    )
