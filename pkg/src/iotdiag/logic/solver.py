"""Grounding, stratified least-model evaluation and constraint checking."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

from .syntax import (
    Atom,
    Comparison,
    Literal,
    Program,
    RangeBinding,
    Rule,
    Var,
    stratify,
)

DEFAULT_GROUND_CAP = 10**7


class GroundingLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class GroundRule:
    head: Atom | None
    pos: tuple[Atom, ...]
    neg: tuple[Atom, ...]
    source: Rule
    bindings: tuple[tuple[str, object], ...] = ()


@dataclass
class GroundProgram:
    facts: frozenset[Atom]
    rules: list[GroundRule]
    constraints: list[GroundRule]
    strata: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.rules) + len(self.constraints)


@dataclass(frozen=True)
class Violation:
    constraint: Rule
    bindings: dict = field(hash=False, compare=False)
    body: tuple[Atom, ...] = ()

    @property
    def requirement_id(self) -> str | None:
        return self.constraint.label.id if self.constraint.label else None


@dataclass(frozen=True)
class SatResult:
    satisfiable: bool
    violations: tuple[Violation, ...] = ()

    def __bool__(self) -> bool:
        return self.satisfiable


def _term_key(t):
    # integers order before symbols, as in clingo
    return (0, t, "") if isinstance(t, int) else (1, 0, t)


def compare(lhs, op: str, rhs) -> bool:
    if op == "=":
        return lhs == rhs
    if op == "!=":
        return lhs != rhs
    a, b = _term_key(lhs), _term_key(rhs)
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise ValueError(f"unknown comparison {op}")


class _Index:
    """Atoms grouped by (predicate, arity) with lazy per-position lookup."""

    def __init__(self, atoms: Iterable[Atom] = ()):
        self.by_sig: dict[tuple, list[Atom]] = defaultdict(list)
        self.members: set[Atom] = set()
        self._pos: dict[tuple, dict] = {}
        for a in atoms:
            self.add(a)

    def add(self, atom: Atom) -> bool:
        if atom in self.members:
            return False
        self.members.add(atom)
        self.by_sig[atom.signature].append(atom)
        for (sig, i), table in self._pos.items():
            if sig == atom.signature:
                table.setdefault(atom.args[i], []).append(atom)
        return True

    def candidates(self, pattern: Atom, binding: dict) -> list[Atom]:
        sig = pattern.signature
        best = None
        for i, arg in enumerate(pattern.args):
            value = binding.get(arg, arg) if isinstance(arg, Var) else arg
            if isinstance(value, Var):
                continue
            key = (sig, i)
            table = self._pos.get(key)
            if table is None:
                table = {}
                for a in self.by_sig.get(sig, ()):
                    table.setdefault(a.args[i], []).append(a)
                self._pos[key] = table
            hits = table.get(value, [])
            if best is None or len(hits) < len(best):
                best = hits
            if not best:
                break
        return best if best is not None else self.by_sig.get(sig, [])

    def __contains__(self, atom: Atom) -> bool:
        return atom in self.members


def _subst(term, binding):
    if isinstance(term, Var):
        return binding.get(term, term)
    return term


def _instantiate(atom: Atom, binding: dict) -> Atom:
    return Atom(atom.pred, tuple(_subst(a, binding) for a in atom.args))


def _unify(pattern: Atom, atom: Atom, binding: dict) -> dict | None:
    out = binding
    for p, v in zip(pattern.args, atom.args):
        if isinstance(p, Var):
            bound = out.get(p)
            if bound is None:
                if out is binding:
                    out = dict(binding)
                out[p] = v
            elif bound != v:
                return None
        elif p != v:
            return None
    return out


def _ready(item, binding) -> bool:
    """True when every variable the item reads is bound."""
    if isinstance(item, Literal):
        return all(not isinstance(a, Var) or a in binding or a.anonymous for a in item.atom.args)
    if isinstance(item, Comparison):
        return all(not isinstance(t, Var) or t in binding for t in (item.lhs, item.rhs))
    return False


def _binding_equality(item, binding) -> bool:
    if not isinstance(item, Comparison) or item.op != "=":
        return False
    l_free = isinstance(item.lhs, Var) and item.lhs not in binding
    r_free = isinstance(item.rhs, Var) and item.rhs not in binding
    return l_free != r_free


def _match_body(body, index: _Index, binding: dict, neg_index: _Index | None) -> Iterator[dict]:
    """Enumerate bindings satisfying the positive/comparison part of *body*.

    Filters (comparisons, negative literals when ``neg_index`` is given) run
    as soon as their variables are bound; binders run in written order.
    """
    if not body:
        yield binding
        return
    # pick the next item: ready filters first, then equalities, ranges, atoms
    choice = None
    for i, item in enumerate(body):
        if isinstance(item, Comparison) and _ready(item, binding):
            choice = i
            break
        if isinstance(item, Literal) and item.negated and _ready(item, binding):
            choice = i
            break
    if choice is None:
        for i, item in enumerate(body):
            if _binding_equality(item, binding):
                choice = i
                break
    if choice is None:
        for i, item in enumerate(body):
            if isinstance(item, (RangeBinding,)) or (isinstance(item, Literal) and not item.negated):
                choice = i
                break
    if choice is None:
        raise ValueError(f"cannot order body items {body}")  # guarded by safety check
    item = body[choice]
    rest = body[:choice] + body[choice + 1:]
    if isinstance(item, Comparison):
        if _binding_equality(item, binding):
            if isinstance(item.lhs, Var) and item.lhs not in binding:
                var, value = item.lhs, _subst(item.rhs, binding)
            else:
                var, value = item.rhs, _subst(item.lhs, binding)
            yield from _match_body(rest, index, {**binding, var: value}, neg_index)
        elif compare(_subst(item.lhs, binding), item.op, _subst(item.rhs, binding)):
            yield from _match_body(rest, index, binding, neg_index)
        return
    if isinstance(item, RangeBinding):
        bound = binding.get(item.var)
        if bound is not None:
            if isinstance(bound, int) and item.lo <= bound <= item.hi:
                yield from _match_body(rest, index, binding, neg_index)
            return
        for v in range(item.lo, item.hi + 1):
            yield from _match_body(rest, index, {**binding, item.var: v}, neg_index)
        return
    if item.negated:
        if neg_index is None or not _any_match(item.atom, binding, neg_index):
            yield from _match_body(rest, index, binding, neg_index)
        return
    for atom in index.candidates(item.atom, binding):
        b = _unify(item.atom, atom, binding)
        if b is not None:
            yield from _match_body(rest, index, b, neg_index)


def _any_match(pattern: Atom, binding: dict, index: _Index) -> bool:
    for atom in index.candidates(pattern, binding):
        if _unify(pattern, atom, binding) is not None:
            return True
    return False


def _ground_rule(rule: Rule, index: _Index, binding_filter=None) -> Iterator[GroundRule]:
    for b in _match_body(rule.body, index, {}, None):
        pos = tuple(
            _instantiate(i.atom, b) for i in rule.body if isinstance(i, Literal) and not i.negated
        )
        neg = tuple(_instantiate(i.atom, b) for i in rule.body if isinstance(i, Literal) and i.negated)
        head = _instantiate(rule.head, b) if rule.head is not None else None
        named = tuple(sorted((v.name, val) for v, val in b.items() if not v.anonymous))
        yield GroundRule(head, pos, neg, rule, named)


def ground(p: Program, extra_facts: Iterable[Atom] = (), cap: int = DEFAULT_GROUND_CAP) -> GroundProgram:
    """Instantiate all rules and constraints over the reachable Herbrand base.

    Negative literals are kept symbolic (not evaluated), so the domain is the
    usual over-approximation: every atom derivable when negation is ignored.
    """
    facts = frozenset(p.facts) | frozenset(extra_facts)
    for a in facts:
        if not a.is_ground():
            raise ValueError(f"non-ground fact {a}")
    strata = stratify(p.rules)
    index = _Index(facts)
    seen: set[tuple] = set()
    ground_rules: list[GroundRule] = []

    def emit(gr: GroundRule, store: list):
        key = (id(gr.source), gr.head, gr.pos, gr.neg)
        if key in seen:
            return False
        seen.add(key)
        store.append(gr)
        if len(seen) > cap:
            raise GroundingLimitError(f"grounding exceeded {cap} instances")
        return True

    order = sorted(p.rules, key=lambda r: strata.get(r.head.pred, 0))
    changed = True
    while changed:
        changed = False
        for rule in order:
            for gr in list(_ground_rule(rule, index)):
                if emit(gr, ground_rules):
                    changed = True
                index.add(gr.head)
    ground_constraints: list[GroundRule] = []
    for c in p.constraints:
        for gr in _ground_rule(c, index):
            emit(gr, ground_constraints)
    return GroundProgram(facts, ground_rules, ground_constraints, strata)


def _present(atom: Atom, model) -> bool:
    if atom.is_ground():
        return atom in model
    # negative literal with anonymous variables: any matching atom counts
    return any(a.signature == atom.signature and _unify(atom, a, {}) is not None for a in model)


def least_model(g: GroundProgram) -> frozenset[Atom]:
    """Stratum-by-stratum fixpoint; ``not a`` holds iff ``a`` is underivable."""
    model: set[Atom] = set(g.facts)
    by_stratum: dict[int, list[GroundRule]] = defaultdict(list)
    for r in g.rules:
        by_stratum[g.strata.get(r.head.pred, 0)].append(r)
    for s in sorted(by_stratum):
        pending = by_stratum[s]
        # negative atoms live in lower strata, so they are settled here
        pending = [r for r in pending if not any(_present(a, model) for a in r.neg)]
        changed = True
        while changed and pending:
            changed = False
            rest = []
            for r in pending:
                if r.head in model:
                    continue
                if all(a in model for a in r.pos):
                    model.add(r.head)
                    changed = True
                else:
                    rest.append(r)
            pending = rest
    return frozenset(model)


def _violations(g: GroundProgram, model: frozenset[Atom]) -> list[Violation]:
    out = []
    for c in g.constraints:
        if all(a in model for a in c.pos) and not any(_present(a, model) for a in c.neg):
            out.append(Violation(c.source, dict(c.bindings), c.pos))
    return out


def check_satisfiable(p: Program, anomaly: Iterable[Atom] = (), cap: int = DEFAULT_GROUND_CAP) -> SatResult:
    """Is the least model of ``p`` plus the anomaly atoms free of constraint violations?"""
    g = ground(p, anomaly, cap)
    model = least_model(g)
    violations = _violations(g, model)
    return SatResult(not violations, tuple(violations))


def solve(p: Program, anomaly: Iterable[Atom] = ()) -> frozenset[Atom]:
    return least_model(ground(p, anomaly))


def exclude(p: Program, req_id: str) -> Program:
    """Copy of ``p`` without the constraint labelled ``req_id``."""
    hits = [c for c in p.constraints if c.label is not None and c.label.id == req_id]
    if not hits:
        raise KeyError(f"unknown requirement id {req_id!r}")
    if len(hits) > 1:
        raise ValueError(f"requirement id {req_id!r} labels {len(hits)} constraints")
    return replace(p, constraints=tuple(c for c in p.constraints if c is not hits[0]))
