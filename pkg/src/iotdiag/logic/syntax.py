"""Abstract syntax, parser and printer for the rule language.

The language is the small Clingo subset used by the smart-home model:
facts (with ``;`` pooling and ``lo..hi`` intervals), normal rules with
negation as failure, comparisons, range bindings, ``#const`` directives,
integrity constraints and choice rules.  Choice rules are parsed and kept
but carry no semantics.

Integrity constraints may be labelled with a requirement annotation placed
on a ``%@`` line directly above them::

    %@ requirement id=ADEV2 diagnosis="DDoS/Botnet" text="..."
    :- communicate(X,Y,_,P,F), X = multiple_endpoints, not available(Y).
"""
from __future__ import annotations

import re
import shlex
from dataclasses import dataclass, field, replace
from typing import Iterator, Union

Symbol = Union[str, int]


class ParseError(ValueError):
    """Syntax or static-check failure, with a 1-based source location."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f"line {line}, column {col}: " if line else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class Var:
    name: str

    @property
    def anonymous(self) -> bool:
        return self.name.startswith("_")

    def __str__(self) -> str:
        return "_" if self.anonymous else self.name


Term = Union[str, int, Var]

_SYMBOL_RE = re.compile(r"[a-z][A-Za-z0-9_]*(?:-[A-Za-z0-9_]+)*\Z")


def format_term(t: Term) -> str:
    if isinstance(t, Var):
        return str(t)
    if isinstance(t, int):
        return str(t)
    if _SYMBOL_RE.match(t) and t != "not":
        return t
    return '"' + t.replace("\\", "\\\\").replace('"', '\\"') + '"'


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple = ()

    def is_ground(self) -> bool:
        return not any(isinstance(a, Var) for a in self.args)

    @property
    def signature(self) -> tuple[str, int]:
        return (self.pred, len(self.args))

    def __str__(self) -> str:
        if not self.args:
            return self.pred
        return f"{self.pred}({','.join(format_term(a) for a in self.args)})"


@dataclass(frozen=True)
class Literal:
    atom: Atom
    negated: bool = False

    def __str__(self) -> str:
        return ("not " if self.negated else "") + str(self.atom)


@dataclass(frozen=True)
class Comparison:
    lhs: Term
    op: str
    rhs: Term

    def __str__(self) -> str:
        return f"{format_term(self.lhs)} {self.op} {format_term(self.rhs)}"


@dataclass(frozen=True)
class RangeBinding:
    var: Var
    lo: int
    hi: int

    def __str__(self) -> str:
        return f"{self.var} = {self.lo}..{self.hi}"


BodyItem = Union[Literal, Comparison, RangeBinding]


@dataclass(frozen=True)
class RequirementMeta:
    id: str
    goal: str = ""
    text: str = ""
    diagnosis: str = ""
    controls: tuple[str, ...] = ()

    def to_annotation(self) -> str:
        parts = [f"id={self.id}"]
        for key in ("goal", "text", "diagnosis"):
            value = getattr(self, key)
            if value:
                parts.append(f"{key}={shlex.quote(value)}")
        if self.controls:
            parts.append(f"controls={shlex.quote(','.join(self.controls))}")
        return "%@ requirement " + " ".join(parts)


@dataclass(frozen=True)
class Rule:
    """A rule ``head :- body.``; ``head is None`` makes it an integrity constraint."""

    head: Atom | None
    body: tuple[BodyItem, ...]
    label: RequirementMeta | None = None
    line: int = field(default=0, compare=False)

    @property
    def is_constraint(self) -> bool:
        return self.head is None

    def __str__(self) -> str:
        body = ", ".join(str(b) for b in self.body)
        if self.head is None:
            return f":- {body}."
        return f"{self.head} :- {body}." if body else f"{self.head}."


@dataclass(frozen=True)
class ChoiceElement:
    atom: Atom
    condition: tuple[BodyItem, ...] = ()

    def __str__(self) -> str:
        if not self.condition:
            return str(self.atom)
        return f"{self.atom} : {', '.join(str(c) for c in self.condition)}"


@dataclass(frozen=True)
class Choice:
    """Choice rule; retained for round-tripping only."""

    elements: tuple[ChoiceElement, ...]
    lower: int | None = None
    upper: int | None = None
    body: tuple[BodyItem, ...] = ()

    def __str__(self) -> str:
        lo = f"{self.lower} " if self.lower is not None else ""
        if self.upper is not None and self.lower == self.upper:
            lo, hi = "", f" = {self.upper}"
        else:
            hi = f" {self.upper}" if self.upper is not None else ""
        text = f"{lo}{{ {'; '.join(str(e) for e in self.elements)} }}{hi}"
        if self.body:
            text += " :- " + ", ".join(str(b) for b in self.body)
        return text + "."


@dataclass(frozen=True)
class Program:
    consts: tuple[tuple[str, int], ...] = ()
    facts: tuple[Atom, ...] = ()
    rules: tuple[Rule, ...] = ()
    constraints: tuple[Rule, ...] = ()
    choices: tuple[Choice, ...] = ()
    # ``not a.`` statements: closed-world assertions that ``a`` is absent
    absent: tuple[Atom, ...] = ()

    @property
    def requirements(self) -> list[RequirementMeta]:
        return [c.label for c in self.constraints if c.label is not None]

    def requirement(self, req_id: str) -> RequirementMeta:
        for meta in self.requirements:
            if meta.id == req_id:
                return meta
        raise KeyError(f"unknown requirement id {req_id!r}")

    def with_facts(self, atoms) -> "Program":
        return replace(self, facts=self.facts + tuple(atoms))


# --------------------------------------------------------------------------
# Lexer

_TOKEN_SPEC = [
    ("ANNOT", r"%@[^\n]*"),
    ("BCOMMENT", r"%\*.*?\*%"),
    ("COMMENT", r"%[^\n]*"),
    ("NL", r"\n"),
    ("WS", r"[ \t\r]+"),
    ("DIRECTIVE", r"#[a-z]+"),
    ("IF", r":-"),
    ("DOTDOT", r"\.\."),
    ("DOT", r"\."),
    ("CMP", r"!=|<=|>=|==|<|>|="),
    ("STRING", r'"(?:[^"\\]|\\.)*"'),
    ("INT", r"-?\d+"),
    ("SYMBOL", r"[a-z][A-Za-z0-9_]*(?:-[A-Za-z0-9_]+)*"),
    ("VAR", r"[A-Z][A-Za-z0-9_]*|_[A-Za-z0-9_]*"),
    ("PUNCT", r"[(),;:{}]"),
    ("MISMATCH", r"."),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{n}>{p})" for n, p in _TOKEN_SPEC), re.DOTALL)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> Iterator[Token]:
    line, line_start = 1, 0
    for m in _TOKEN_RE.finditer(text):
        kind, value = m.lastgroup, m.group()
        col = m.start() - line_start + 1
        if kind == "NL":
            line += 1
            line_start = m.end()
            continue
        if kind in ("WS", "COMMENT"):
            continue
        if kind == "BCOMMENT":
            line += value.count("\n")
            if "\n" in value:
                line_start = m.start() + value.rfind("\n") + 1
            continue
        if kind == "MISMATCH":
            raise ParseError(f"unexpected character {value!r}", line, col)
        yield Token(kind, value, line, col)
    yield Token("EOF", "", line, len(text) - line_start + 1)


# --------------------------------------------------------------------------
# Parser


def parse_annotation(text: str, line: int = 0) -> RequirementMeta:
    try:
        words = shlex.split(text[2:])
    except ValueError as exc:
        raise ParseError(f"malformed annotation: {exc}", line) from None
    if not words or words[0] != "requirement":
        raise ParseError("annotation must start with 'requirement'", line)
    fields: dict[str, str] = {}
    for word in words[1:]:
        key, sep, value = word.partition("=")
        if not sep:
            raise ParseError(f"annotation item {word!r} is not key=value", line)
        fields[key] = value
    if "id" not in fields:
        raise ParseError("annotation lacks id=", line)
    unknown = set(fields) - {"id", "goal", "text", "diagnosis", "controls"}
    if unknown:
        raise ParseError(f"unknown annotation keys {sorted(unknown)}", line)
    controls = tuple(c for c in fields.get("controls", "").split(",") if c)
    return RequirementMeta(
        id=fields["id"],
        goal=fields.get("goal", ""),
        text=fields.get("text", ""),
        diagnosis=fields.get("diagnosis", ""),
        controls=controls,
    )


class _Parser:
    def __init__(self, text: str):
        self.tokens = list(tokenize(text))
        self.pos = 0
        self.anon = 0

    # token helpers
    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if not self.at(kind, text):
            want = text or kind
            raise ParseError(f"expected {want!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        return self.next()

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.peek()
        return ParseError(message, tok.line, tok.col)

    # grammar
    def parse(self):
        stmts = []
        pending: tuple[RequirementMeta, Token] | None = None
        while not self.at("EOF"):
            tok = self.peek()
            if tok.kind == "ANNOT":
                self.next()
                if pending is not None:
                    raise self.error("annotation not followed by a constraint", pending[1])
                pending = (parse_annotation(tok.text, tok.line), tok)
                continue
            stmt = self.statement()
            if pending is not None:
                if not (isinstance(stmt, Rule) and stmt.is_constraint):
                    raise self.error("annotation must precede an integrity constraint", pending[1])
                stmt = replace(stmt, label=pending[0])
                pending = None
            stmts.append(stmt)
        if pending is not None:
            raise self.error("dangling annotation at end of input", pending[1])
        return stmts

    def statement(self):
        self.anon = 0
        tok = self.peek()
        if tok.kind == "DIRECTIVE":
            return self.directive()
        if tok.kind == "IF":
            self.next()
            body = self.body()
            self.expect("DOT")
            return Rule(None, body, line=tok.line)
        if self.at("PUNCT", "{") or (tok.kind == "INT" and self.peek(1).text == "{"):
            return self.choice()
        if tok.kind == "SYMBOL" and tok.text == "not":
            self.next()
            atom = self.atom()
            self.expect("DOT")
            if not atom.is_ground():
                raise self.error("absence assertion must be ground", tok)
            return ("absent", atom)
        head_tok = tok
        heads = self.pooled_atom()
        if self.at("DOT"):
            self.next()
            for h in heads:
                if not h.is_ground():
                    raise self.error(f"fact {h} contains variables", head_tok)
            return ("facts", heads)
        self.expect("IF")
        if len(heads) != 1:
            raise self.error("pooling is only supported in facts", head_tok)
        body = self.body()
        self.expect("DOT")
        return Rule(heads[0], body, line=head_tok.line)

    def directive(self):
        tok = self.next()
        if tok.text == "#const":
            name = self.expect("SYMBOL").text
            self.expect("CMP", "=")
            value = self.expect("INT").text
            self.expect("DOT")
            return ("const", name, int(value))
        if tok.text == "#show":
            while not self.at("DOT"):
                if self.at("EOF"):
                    raise self.error("unterminated #show")
                self.next()
            self.next()
            return None
        raise self.error(f"unsupported directive {tok.text}", tok)

    def choice(self) -> Choice:
        lower = upper = None
        if self.at("INT"):
            lower = int(self.next().text)
        self.expect("PUNCT", "{")
        elements = []
        while True:
            atom = self.atom()
            cond: tuple = ()
            if self.at("PUNCT", ":"):
                self.next()
                cond = self.literals(stop=("}", ";"))
            elements.append(ChoiceElement(atom, cond))
            if self.at("PUNCT", ";"):
                self.next()
                continue
            break
        self.expect("PUNCT", "}")
        if self.at("CMP"):
            op = self.next()
            bound = int(self.expect("INT").text)
            if op.text == "=":
                lower = upper = bound
            elif op.text == "<=":
                upper = bound
            elif op.text == ">=":
                lower = bound
            else:
                raise self.error(f"unsupported choice bound {op.text}", op)
        elif self.at("INT"):
            upper = int(self.next().text)
        body: tuple = ()
        if self.at("IF"):
            self.next()
            body = self.body()
        self.expect("DOT")
        return Choice(tuple(elements), lower, upper, body)

    def body(self) -> tuple:
        return self.literals(stop=())

    def literals(self, stop: tuple) -> tuple:
        items = [self.literal()]
        while self.at("PUNCT", ","):
            self.next()
            items.append(self.literal())
        return tuple(items)

    def literal(self) -> BodyItem:
        tok = self.peek()
        if tok.kind == "SYMBOL" and tok.text == "not" and self.peek(1).kind == "SYMBOL":
            self.next()
            return Literal(self.atom(), negated=True)
        if tok.kind == "SYMBOL" and not (self.peek(1).kind == "CMP"):
            return Literal(self.atom())
        lhs = self.term()
        op_tok = self.expect("CMP")
        op = "=" if op_tok.text == "==" else op_tok.text
        rhs = self.term()
        if self.at("DOTDOT"):
            self.next()
            hi = self.term()
            if op != "=" or not isinstance(lhs, Var) or lhs.anonymous:
                raise self.error("interval must be bound as VAR = lo..hi", op_tok)
            return RangeBinding(lhs, rhs, hi)  # consts resolved later
        return Comparison(lhs, op, rhs)

    def term(self) -> Term:
        tok = self.next()
        if tok.kind == "INT":
            return int(tok.text)
        if tok.kind == "SYMBOL":
            return tok.text
        if tok.kind == "STRING":
            return re.sub(r"\\(.)", r"\1", tok.text[1:-1])
        if tok.kind == "VAR":
            if tok.text == "_":
                self.anon += 1
                return Var(f"_{self.anon}")
            return Var(tok.text)
        raise self.error(f"expected a term, found {tok.text or 'end of input'!r}", tok)

    def atom(self) -> Atom:
        name = self.expect("SYMBOL")
        if name.text == "not":
            raise self.error("'not' is reserved", name)
        args: list = []
        if self.at("PUNCT", "("):
            self.next()
            args.append(self.term())
            while self.at("PUNCT", ","):
                self.next()
                args.append(self.term())
            self.expect("PUNCT", ")")
        return Atom(name.text, tuple(args))

    def pooled_atom(self) -> list[Atom]:
        """Atom whose arguments may use ``;`` pooling and ``lo..hi`` intervals."""
        name = self.expect("SYMBOL")
        if name.text == "not":
            raise self.error("'not' is reserved", name)
        if not self.at("PUNCT", "("):
            return [Atom(name.text)]
        self.next()
        alternatives: list[list] = [[]]
        while True:
            t = self.term()
            if self.at("DOTDOT"):
                self.next()
                t = ("interval", t, self.term())
            alternatives[-1].append(t)
            if self.at("PUNCT", ","):
                self.next()
            elif self.at("PUNCT", ";"):
                self.next()
                alternatives.append([])
            else:
                self.expect("PUNCT", ")")
                break
        return [Atom(name.text, tuple(alt)) for alt in alternatives]


def _resolve_const(value, consts: dict[str, int]):
    if isinstance(value, str) and value in consts:
        return consts[value]
    return value


def _resolve_item(item, consts):
    if isinstance(item, Literal):
        return Literal(_resolve_atom(item.atom, consts), item.negated)
    if isinstance(item, Comparison):
        return Comparison(_resolve_const(item.lhs, consts), item.op, _resolve_const(item.rhs, consts))
    lo, hi = _resolve_const(item.lo, consts), _resolve_const(item.hi, consts)
    if not (isinstance(lo, int) and isinstance(hi, int)):
        raise ParseError(f"interval bounds of {item.var} must be integers")
    if lo > hi:
        raise ParseError(f"empty interval {lo}..{hi}")
    return RangeBinding(item.var, lo, hi)


def _resolve_atom(atom: Atom, consts) -> Atom:
    return Atom(atom.pred, tuple(_resolve_const(a, consts) for a in atom.args))


def _expand_fact(atom: Atom, consts) -> list[Atom]:
    out: list[list] = [[]]
    for arg in atom.args:
        if isinstance(arg, tuple):
            lo, hi = _resolve_const(arg[1], consts), _resolve_const(arg[2], consts)
            if not (isinstance(lo, int) and isinstance(hi, int)):
                raise ParseError(f"interval bounds in {atom.pred} must be integers")
            out = [o + [v] for o in out for v in range(lo, hi + 1)]
        else:
            out = [o + [_resolve_const(arg, consts)] for o in out]
    return [Atom(atom.pred, tuple(o)) for o in out]


# --------------------------------------------------------------------------
# Static checks


def _vars_of(term_or_atom) -> set[Var]:
    if isinstance(term_or_atom, Var):
        return {term_or_atom}
    if isinstance(term_or_atom, Atom):
        return {a for a in term_or_atom.args if isinstance(a, Var)}
    return set()


def bound_variables(body) -> set[Var]:
    """Variables that the body binds positively (atoms, ranges, equalities)."""
    bound: set[Var] = set()
    for item in body:
        if isinstance(item, Literal) and not item.negated:
            bound |= _vars_of(item.atom)
        elif isinstance(item, RangeBinding):
            bound.add(item.var)
    changed = True
    while changed:
        changed = False
        for item in body:
            if isinstance(item, Comparison) and item.op == "=":
                lv, rv = _vars_of(item.lhs), _vars_of(item.rhs)
                if lv - bound and not (rv - bound):
                    bound |= lv
                    changed = True
                elif rv - bound and not (lv - bound):
                    bound |= rv
                    changed = True
    return bound


def check_safety(rule: Rule) -> None:
    bound = bound_variables(rule.body)
    needed: set[Var] = set()
    if rule.head is not None:
        needed |= _vars_of(rule.head)
    for item in rule.body:
        if isinstance(item, Literal) and item.negated:
            needed |= {v for v in _vars_of(item.atom) if not v.anonymous}
        elif isinstance(item, Comparison):
            needed |= _vars_of(item.lhs) | _vars_of(item.rhs)
    unsafe = sorted(v.name for v in needed - bound)
    if unsafe:
        raise ParseError(f"unsafe variables {', '.join(unsafe)} in rule: {rule}", rule.line)


def stratify(rules) -> dict[str, int]:
    """Map each predicate name to its stratum; raise on negation through recursion."""
    preds: set[str] = set()
    edges: list[tuple[str, str, bool]] = []
    for rule in rules:
        if rule.head is None:
            continue
        preds.add(rule.head.pred)
        for item in rule.body:
            if isinstance(item, Literal):
                preds.add(item.atom.pred)
                edges.append((rule.head.pred, item.atom.pred, item.negated))
    stratum = dict.fromkeys(preds, 0)
    limit = len(preds)
    changed = True
    while changed:
        changed = False
        for head, dep, negated in edges:
            need = stratum[dep] + (1 if negated else 0)
            if stratum[head] < need:
                stratum[head] = need
                changed = True
                if need > limit:
                    bad = next(r for r in rules if r.head is not None and r.head.pred == head)
                    raise ParseError(f"unstratified negation through predicate {head!r}", bad.line)
    return stratum


def build_program(stmts, text_consts=None) -> Program:
    consts: dict[str, int] = dict(text_consts or {})
    for s in stmts:
        if isinstance(s, tuple) and s[0] == "const":
            if s[1] in consts and consts[s[1]] != s[2]:
                raise ParseError(f"constant {s[1]} redefined")
            consts[s[1]] = s[2]
    facts: list[Atom] = []
    rules: list[Rule] = []
    constraints: list[Rule] = []
    choices: list[Choice] = []
    absent: list[Atom] = []
    seen_ids: set[str] = set()
    for s in stmts:
        if s is None:
            continue
        if isinstance(s, Rule):
            body = tuple(_resolve_item(i, consts) for i in s.body)
            head = _resolve_atom(s.head, consts) if s.head is not None else None
            rule = replace(s, head=head, body=body)
            check_safety(rule)
            if rule.is_constraint:
                if rule.label is not None:
                    if rule.label.id in seen_ids:
                        raise ParseError(f"duplicate requirement id {rule.label.id}", rule.line)
                    seen_ids.add(rule.label.id)
                constraints.append(rule)
            else:
                rules.append(rule)
        elif isinstance(s, Choice):
            choices.append(s)
        elif s[0] == "facts":
            for atom in s[1]:
                facts.extend(_expand_fact(atom, consts))
        elif s[0] == "absent":
            absent.append(_resolve_atom(s[1], consts))
    stratify(rules)
    return Program(
        consts=tuple(sorted(consts.items())),
        facts=tuple(facts),
        rules=tuple(rules),
        constraints=tuple(constraints),
        choices=tuple(choices),
        absent=tuple(absent),
    )


def parse_program(text: str) -> Program:
    """Parse rule-language source into an immutable :class:`Program`.

    Raises :class:`ParseError` for syntax errors, unsafe rules, unstratified
    negation and duplicate requirement ids.
    """
    return build_program(_Parser(text).parse())


def parse_atoms(text: str) -> list[Atom]:
    """Parse a fact-only text (e.g. an anomaly trace) into ground atoms."""
    program = parse_program(text)
    if program.rules or program.constraints or program.choices:
        raise ParseError("expected facts only")
    return list(program.facts)


def format_program(p: Program) -> str:
    """Canonical text form; ``parse_program(format_program(p)) == p``."""
    lines = [f"#const {name} = {value}." for name, value in p.consts]
    lines += [f"{a}." for a in p.facts]
    lines += [f"not {a}." for a in p.absent]
    lines += [str(c) for c in p.choices]
    lines += [str(r) for r in p.rules]
    for c in p.constraints:
        if c.label is not None:
            lines.append(c.label.to_annotation())
        lines.append(str(c))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_fact_statements(text: str) -> list[tuple[bool, Atom]]:
    """Ground facts in source order as ``(absent, atom)`` pairs.

    ``absent`` is true for ``not a.`` statements.  Rules are rejected.
    """
    out: list[tuple[bool, Atom]] = []
    for s in _Parser(text).parse():
        if s is None:
            continue
        if isinstance(s, (Rule, Choice)) or s[0] == "const":
            raise ParseError("expected facts only")
        if s[0] == "absent":
            out.append((True, s[1]))
        else:
            out.extend((False, a) for atom in s[1] for a in _expand_fact(atom, {}))
    return out
