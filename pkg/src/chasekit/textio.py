"""Line-oriented text format for rules (.tgd), instances (.fact) and
queries (.cq).

Rules::

    const a, b.
    E(x,y) -> exists z. E(y,z).
    true -> exists x. R(x,x), G(x,x).
    @dom(x) -> exists z,w. R(x,z), G(x,w).

Queries::

    ?(x,y) := R(x,u), R(y,v), G(u,v).

Instances hold ground facts; an argument starting with an upper-case letter
is read as a variable and rejected.  ``#`` starts a comment.
"""
from __future__ import annotations

from dataclasses import dataclass

from .model import (
    Atom,
    ConjunctiveQuery,
    Constant,
    Instance,
    Rule,
    RuleSet,
    Skolem,
    Term,
    Variable,
    format_atom,
    format_term,
    sorted_atoms,
)


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int

    def __str__(self):
        return f"{self.line}:{self.column}"


class ParseError(ValueError):
    def __init__(self, message: str, span: SourceSpan):
        super().__init__(f"{span}: {message}")
        self.message = message
        self.span = span


_PUNCT = ("->", ":=", "(", ")", ",", ".", "?", "@")


@dataclass(frozen=True)
class _Tok:
    kind: str  # ident, punct, skolem, eof
    text: str
    span: SourceSpan


def _is_ident_start(ch):
    return ch.isalnum() or ch == "_"


def _is_ident_char(ch):
    return ch.isalnum() or ch in "_'"


def _tokenize(text: str) -> list:
    toks = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        span = SourceSpan(line, col)
        if text.startswith("sk[", i):
            j = text.find("]", i)
            nl = text.find("\n", i)
            if j < 0 or (0 <= nl < j):
                raise ParseError("unterminated Skolem tag", span)
            toks.append(_Tok("skolem", text[i + 3 : j], span))
            col += j + 1 - i
            i = j + 1
            continue
        if _is_ident_start(ch):
            j = i
            while j < n and _is_ident_char(text[j]):
                j += 1
            toks.append(_Tok("ident", text[i:j], span))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                toks.append(_Tok("punct", p, span))
                i += len(p)
                col += len(p)
                break
        else:
            raise ParseError(f"unexpected character {ch!r}", span)
    toks.append(_Tok("eof", "", SourceSpan(line, col)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.constants: set = set()
        self.arities: dict = {}

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k=1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text, kind="punct") -> bool:
        return self.tok.kind == kind and self.tok.text == text

    def expect(self, text, kind="punct") -> _Tok:
        if not self.at(text, kind):
            found = self.tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", self.tok.span)
        t = self.tok
        self.i += 1
        return t

    def ident(self, what="identifier") -> _Tok:
        if self.tok.kind != "ident":
            found = self.tok.text or "end of input"
            raise ParseError(f"expected {what}, found {found!r}", self.tok.span)
        t = self.tok
        self.i += 1
        return t

    def ident_list(self) -> list:
        out = [self.ident()]
        while self.at(","):
            self.i += 1
            out.append(self.ident())
        return out

    def const_decl(self):
        self.expect("const", "ident")
        for t in self.ident_list():
            self.constants.add(t.text)
        self.expect(".")

    def note_arity(self, rel: str, arity: int, span: SourceSpan):
        known = self.arities.setdefault(rel, arity)
        if known != arity:
            raise ParseError(f"relation {rel} used with arity {arity}, earlier {known}", span)

    def atom(self, term_fn) -> Atom:
        name = self.ident("relation name")
        args = []
        if self.at("("):
            open_tok = self.tok
            self.i += 1
            if not self.at(")"):
                args.append(term_fn())
                while self.at(","):
                    self.i += 1
                    args.append(term_fn())
            if not self.at(")"):
                found = self.tok.text or "end of input"
                raise ParseError(
                    f"unclosed '(' opened at {open_tok.span}; found {found!r}", self.tok.span)
            self.i += 1
        self.note_arity(name.text, len(args), name.span)
        return Atom(name.text, args)

    def open_term(self) -> Term:
        t = self.ident("term")
        if t.text in self.constants:
            return Constant(t.text)
        return Variable(t.text)

    def ground_term(self) -> Term:
        if self.tok.kind == "skolem":
            tok = self.tok
            self.i += 1
            tag, sep, pos = tok.text.rpartition("/")
            if not sep or not pos.isdigit() or not tag:
                raise ParseError("malformed Skolem tag", tok.span)
            self.expect("(")
            args = []
            if not self.at(")"):
                args.append(self.ground_term())
                while self.at(","):
                    self.i += 1
                    args.append(self.ground_term())
            self.expect(")")
            return Skolem(tag, int(pos), tuple(args))
        t = self.ident("constant")
        if t.text[0].isupper():
            raise ParseError(f"variables are forbidden in instances: {t.text}", t.span)
        return Constant(t.text)

    def atom_list(self, term_fn) -> list:
        out = [self.atom(term_fn)]
        while self.at(","):
            self.i += 1
            out.append(self.atom(term_fn))
        return out


def parse_rules(text: str) -> RuleSet:
    p = _Parser(text)
    rules = []
    while p.tok.kind != "eof":
        if p.at("const", "ident") and p.peek().kind == "ident":
            p.const_decl()
            continue
        rules.append(_parse_rule(p))
    return RuleSet(rules)


def _parse_rule(p: _Parser) -> Rule:
    start = p.tok.span
    body, dom = [], []
    if p.at("true", "ident") and p.peek().text == "->":
        p.i += 1
    else:
        while True:
            if p.at("@"):
                p.i += 1
                kw = p.ident()
                if kw.text != "dom":
                    raise ParseError(f"unknown annotation @{kw.text}", kw.span)
                p.expect("(")
                v = p.ident("variable")
                if v.text in p.constants:
                    raise ParseError("@dom expects a variable", v.span)
                dom.append((Variable(v.text), v.span))
                p.expect(")")
            else:
                body.append(p.atom(p.open_term))
            if not p.at(","):
                break
            p.i += 1
    p.expect("->")
    declared = []
    if p.at("exists", "ident") and p.peek().kind == "ident":
        p.i += 1
        declared = p.ident_list()
        p.expect(".")
    head = p.atom_list(p.open_term)
    p.expect(".")

    body_vars = {t for a in body for t in a.args if isinstance(t, Variable)}
    head_vars = {t for a in head for t in a.args if isinstance(t, Variable)}
    ex = set()
    for tok in declared:
        v = Variable(tok.text)
        if tok.text in p.constants:
            raise ParseError(f"{tok.text} is declared constant", tok.span)
        if v in body_vars:
            raise ParseError(f"existential variable {tok.text} occurs in the body", tok.span)
        ex.add(v)
    dom_vars = set()
    for v, span in dom:
        if v in body_vars:
            raise ParseError(f"@dom variable {v.name} occurs in a body atom", span)
        if v not in head_vars:
            raise ParseError(f"@dom variable {v.name} does not occur in the head", span)
        dom_vars.add(v)
    for a in head:
        for t in a.args:
            if isinstance(t, Constant):
                raise ParseError("constants are not allowed in rule heads", start)
    unbound = head_vars - body_vars - ex - dom_vars
    if unbound:
        names = ", ".join(sorted(v.name for v in unbound))
        raise ParseError(f"head variable(s) {names} not bound by body, exists or @dom", start)
    return Rule(body, head, dom_vars)


def parse_instance(text: str) -> Instance:
    p = _Parser(text)
    facts = []
    while p.tok.kind != "eof":
        facts.append(p.atom(p.ground_term))
        p.expect(".")
    return Instance(facts)


def _parse_one_query(p: _Parser) -> ConjunctiveQuery:
    p.expect("?")
    p.expect("(")
    free = []
    if not p.at(")"):
        free = p.ident_list()
    p.expect(")")
    p.expect(":=")
    if p.at("true", "ident") and p.peek().text == ".":
        p.i += 1
        body = []
    else:
        body = p.atom_list(p.open_term)
    end = p.expect(".")
    free_vars = []
    body_vars = {t for a in body for t in a.args if isinstance(t, Variable)}
    for tok in free:
        if tok.text in p.constants:
            raise ParseError(f"{tok.text} is declared constant", tok.span)
        v = Variable(tok.text)
        if v not in body_vars:
            raise ParseError(f"free variable {tok.text} absent from body", tok.span)
        free_vars.append(v)
    try:
        return ConjunctiveQuery(free_vars, body)
    except ValueError as exc:
        raise ParseError(str(exc), end.span) from None


def parse_queries(text: str) -> list:
    p = _Parser(text)
    out = []
    while p.tok.kind != "eof":
        if p.at("const", "ident") and p.peek().kind == "ident":
            p.const_decl()
            continue
        out.append(_parse_one_query(p))
    return out


def parse_query(text: str) -> ConjunctiveQuery:
    qs = parse_queries(text)
    if len(qs) != 1:
        raise ParseError(f"expected exactly one query, found {len(qs)}", SourceSpan(1, 1))
    return qs[0]


# ----------------------------------------------------------------------
# Printing


def print_term(t: Term) -> str:
    return format_term(t)


def print_atom(a: Atom) -> str:
    return format_atom(a)


def _constants_of(atoms) -> list:
    return sorted({t.name for a in atoms for t in a.args if isinstance(t, Constant)})


def _const_line(names) -> str:
    return f"const {', '.join(names)}.\n" if names else ""


def print_rule(rule: Rule) -> str:
    items = [f"@dom({v.name})" for v in sorted(rule.domain_vars, key=lambda v: v.name)]
    items += [format_atom(a) for a in rule.body]
    body = ", ".join(items) if items else "true"
    ex = sorted(v.name for v in rule.existentials)
    prefix = f"exists {','.join(ex)}. " if ex else ""
    head = ", ".join(format_atom(a) for a in rule.head)
    return f"{body} -> {prefix}{head}."


def print_rules(rules: RuleSet) -> str:
    consts = _constants_of(a for r in rules for a in r.body)
    return _const_line(consts) + "".join(print_rule(r) + "\n" for r in rules)


def print_instance(inst: Instance) -> str:
    return "".join(format_atom(a) + ".\n" for a in sorted_atoms(inst.facts))


def query_text(q: ConjunctiveQuery) -> str:
    free = ",".join(v.name for v in q.free_vars)
    body = ", ".join(format_atom(a) for a in sorted_atoms(q.body)) or "true"
    return f"?({free}) := {body}."


def print_query(q: ConjunctiveQuery) -> str:
    return _const_line(_constants_of(q.body)) + query_text(q)


def print_queries(qs, header: str = "") -> str:
    qs = list(qs)
    consts = _constants_of(a for q in qs for a in q.body)
    lines = [header] if header else []
    if consts:
        lines.append(_const_line(consts).rstrip("\n"))
    lines += [query_text(q) for q in qs]
    return "\n".join(lines) + "\n"
