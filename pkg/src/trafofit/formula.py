"""Parser for ``response | interacting ~ shifting`` model formulas.

Grammar (whitespace is insignificant)::

    formula   := response [ "|" terms ] "~" terms
    terms     := term ( "+" term )*
    term      := "0" | "1" | NAME | NAME "(" args ")"
    args      := arg ( "," arg )*
    arg       := NAME "=" NUMBER | NUMBER | NAME

Bare variable names parse to ``kind="var"``; :func:`resolve_terms` turns them
into linear or factor terms once the column types are known.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

__all__ = [
    "FormulaError",
    "Term",
    "ModelSpec",
    "parse_formula",
    "parse_ontram",
    "format_formula",
    "resolve_terms",
    "TERM_FUNCTIONS",
]

DEFAULT_SPLINE_BASIS = 10
DEFAULT_LASSO_PENALTY = 0.01

TERM_FUNCTIONS = ("s", "fac", "lasso", "deep", "nn", "atplag")


class FormulaError(ValueError):
    """Syntax or semantic error in a model formula."""

    def __init__(self, message, position=None, text=None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} at position {position}"
        super().__init__(message)


@dataclass(frozen=True)
class Term:
    """One additive term of a formula side.

    ``kind`` is one of intercept, var, linear, factor, smooth, lasso, deep,
    atplag.  ``name`` is the variable (or network name for deep terms).
    """

    kind: str
    name: str = ""
    varnames: tuple = ()
    df: float | None = None
    n_basis: int | None = None
    penalty: float | None = None
    bare: bool = False  # factor written as a plain column name
    span: tuple | None = field(default=None, compare=False, repr=False)

    @property
    def label(self) -> str:
        if self.kind == "intercept":
            return "1"
        if self.kind in ("var", "linear"):
            return self.name
        if self.kind == "factor":
            return self.name if self.bare else f"fac({self.name})"
        if self.kind == "smooth":
            return f"s({self.name}, df = {_fmt_num(self.df)})"
        if self.kind == "lasso":
            return f"lasso({self.name})"
        if self.kind == "deep":
            return f"{self.name}({', '.join(self.varnames)})"
        if self.kind == "atplag":
            return f"atplag({self.name})"
        raise ValueError(self.kind)

    def source(self) -> str:
        """Formula text that reparses to this term."""
        if self.kind == "smooth":
            extra = "" if self.n_basis in (None, DEFAULT_SPLINE_BASIS) else f", k = {self.n_basis}"
            return f"s({self.name}, df = {_fmt_num(self.df)}{extra})"
        if self.kind == "lasso" and self.penalty not in (None, DEFAULT_LASSO_PENALTY):
            return f"lasso({self.name}, la = {_fmt_num(self.penalty)})"
        if self.kind == "factor" and self.bare:
            return self.name
        return self.label

    @property
    def variables(self) -> tuple:
        if self.kind == "intercept":
            return ()
        if self.kind == "deep":
            return self.varnames
        return (self.name,)


@dataclass(frozen=True)
class ModelSpec:
    response: str
    interacting: tuple
    shifting: tuple
    suppress_shift_intercept: bool = False

    @property
    def shift_intercept(self) -> bool:
        return not self.suppress_shift_intercept

    @property
    def variables(self) -> tuple:
        seen = []
        for t in self.interacting + self.shifting:
            for v in t.variables:
                if v not in seen:
                    seen.append(v)
        return tuple(seen)

    def __str__(self):
        return format_formula(self)


def _fmt_num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


# --------------------------------------------------------------------------
# tokenizer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_.][A-Za-z0-9_.]*)"
    r"|(?P<op>[|~+(),=]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = len(text[pos:]) - len(text[pos:].lstrip()) + pos
            raise FormulaError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, networks=()):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.networks = set(networks)

    @property
    def tok(self):
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return FormulaError(msg, tok.pos, self.text)

    def expect(self, text):
        if self.tok.text != text:
            got = repr(self.tok.text) if self.tok.kind != "end" else "end of formula"
            raise self.error(f"expected {text!r}, got {got}")
        self.i += 1

    def at(self, text):
        return self.tok.kind == "op" and self.tok.text == text

    def name(self) -> _Tok:
        if self.tok.kind != "name":
            got = repr(self.tok.text) if self.tok.kind != "end" else "end of formula"
            raise self.error(f"expected a variable name, got {got}")
        t = self.tok
        self.i += 1
        return t

    def terms(self, side: str) -> list:
        out = [self.term(side)]
        while self.at("+"):
            self.i += 1
            out.append(self.term(side))
        return out

    def term(self, side):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            if tok.text in ("0", "1"):
                return Term("intercept", name=tok.text, span=(tok.pos, tok.pos + 1))
            raise self.error(f"numeric term {tok.text!r} must be 0 or 1", tok)
        name = self.name()
        if not self.at("("):
            return Term("var", name.text, span=(name.pos, name.pos + len(name.text)))
        self.i += 1
        args = self.args()
        end = self.tok.pos
        self.expect(")")
        return self._call(name, args, side, (name.pos, end + 1))

    def args(self):
        args = []
        while True:
            tok = self.tok
            if tok.kind == "name" and self.toks[self.i + 1].text == "=":
                self.i += 2
                val = self.tok
                if val.kind != "num":
                    raise self.error("argument values must be numeric literals")
                self.i += 1
                args.append((tok.text, float(val.text), tok))
            elif tok.kind == "num":
                self.i += 1
                args.append((None, float(tok.text), tok))
            elif tok.kind == "name":
                self.i += 1
                args.append((None, tok.text, tok))
            else:
                raise self.error("expected an argument")
            if not self.at(","):
                return args
            self.i += 1

    def _call(self, fname, args, side, span):
        fn = fname.text
        names = [a[1] for a in args if a[0] is None and isinstance(a[1], str)]
        numbers = [a for a in args if not isinstance(a[1], str)]
        if fn in ("deep", "nn") or fn in self.networks:
            if not names:
                raise self.error(f"{fn}() needs at least one variable", fname)
            if numbers:
                raise self.error(f"{fn}() takes only variable names", numbers[0][2])
            return Term("deep", fn, varnames=tuple(names), span=span)
        if fn not in TERM_FUNCTIONS:
            raise self.error(f"unknown term function {fn!r}", fname)
        if len(names) != 1:
            raise self.error(f"{fn}() takes exactly one variable", fname)
        var = names[0]
        if fn == "s":
            df = None
            k = DEFAULT_SPLINE_BASIS
            positional = [a for a in numbers if a[0] is None]
            for key, val, tok in numbers:
                if key == "df" or (key is None and positional and tok is positional[0][2]):
                    df = float(val)
                elif key == "k":
                    k = int(val)
                else:
                    raise self.error(f"unknown argument {key!r} for s()", tok)
            if df is None:
                df = float(k - 1)
            if not (df > 1 and df <= k):
                raise self.error(f"s() needs 1 < df <= {k}, got {_fmt_num(df)}", fname)
            return Term("smooth", var, df=df, n_basis=k, span=span)
        if fn == "lasso":
            pen = DEFAULT_LASSO_PENALTY
            for key, val, tok in numbers:
                if key in (None, "la", "lambda"):
                    pen = float(val)
                else:
                    raise self.error(f"unknown argument {key!r} for lasso()", tok)
            if pen < 0:
                raise self.error("lasso penalty must be nonnegative", fname)
            return Term("lasso", var, penalty=pen, span=span)
        if numbers:
            raise self.error(f"{fn}() takes no numeric arguments", numbers[0][2])
        if fn == "fac":
            return Term("factor", var, span=span)
        if side != "shifting":
            raise self.error("atplag() is only allowed on the shifting side", fname)
        return Term("atplag", var, span=span)


def _split_intercepts(terms, side, parser):
    suppress = False
    explicit_one = False
    out = []
    for t in terms:
        if t.kind == "intercept":
            if t.name == "0":
                suppress = True
            else:
                explicit_one = True
            continue
        out.append(t)
    if suppress and explicit_one:
        raise FormulaError(f"both 0 and 1 given on the {side} side", None, parser.text)
    return out, suppress


def _check_sides(interacting, shifting, text):
    for side, terms in (("interacting", interacting), ("shifting", shifting)):
        nets = [t.name for t in terms if t.kind == "deep"]
        dup = {n for n in nets if nets.count(n) > 1}
        if dup:
            raise FormulaError(
                f"network {sorted(dup)[0]!r} used more than once on the {side} side", None, text
            )
        for t in terms:
            if side == "interacting" and t.kind == "atplag":
                pos = t.span[0] if t.span else None
                raise FormulaError("atplag() is only allowed on the shifting side", pos, text)


def parse_formula(text: str, networks=()) -> ModelSpec:
    """Parse ``response | interacting ~ shifting`` into a :class:`ModelSpec`.

    ``networks`` lists extra function names that denote deep terms, in
    addition to ``deep`` and ``nn``.
    """
    if not isinstance(text, str) or not text.strip():
        raise FormulaError("formula must be a nonempty string")
    p = _Parser(text, networks)
    response = p.name()
    interacting = []
    if p.at("|"):
        p.i += 1
        interacting = p.terms("interacting")
    p.expect("~")
    shifting = p.terms("shifting")
    if p.at("|"):
        raise p.error("'|' is not allowed on the right-hand side")
    if p.tok.kind != "end":
        raise p.error(f"unexpected {p.tok.text!r}")
    interacting, no_int = _split_intercepts(interacting, "interacting", p)
    if no_int:
        raise FormulaError("the interacting side always carries an intercept; '0' is not allowed", None, text)
    shifting, suppress = _split_intercepts(shifting, "shifting", p)
    _check_sides(interacting, shifting, text)
    return ModelSpec(
        response=response.text,
        interacting=(Term("intercept", "1"),) + tuple(interacting),
        shifting=tuple(shifting),
        suppress_shift_intercept=suppress,
    )


def _one_sided(text, what, networks, side):
    if not isinstance(text, str) or not text.strip():
        raise FormulaError(f"{what} formula must be a nonempty string")
    p = _Parser(text, networks)
    p.expect("~")
    terms = p.terms(side)
    if p.tok.kind != "end":
        raise p.error(f"unexpected {p.tok.text!r}")
    return p, terms


def parse_ontram(response: str, intercept: str, shift: str, networks=()) -> ModelSpec:
    """Alternative interface: three one-sided formulas ``~ Y``, ``~ X``, ``~ Z``."""
    p, resp = _one_sided(response, "response", networks, "response")
    if len(resp) != 1 or resp[0].kind != "var":
        raise FormulaError("response formula must name a single variable", None, response)
    p_int, inter = _one_sided(intercept, "intercept", networks, "interacting")
    inter, no_int = _split_intercepts(inter, "interacting", p_int)
    if no_int:
        raise FormulaError("intercept formula cannot drop the intercept", None, intercept)
    p_sh, shifting = _one_sided(shift, "shift", networks, "shifting")
    shifting, suppress = _split_intercepts(shifting, "shifting", p_sh)
    _check_sides(inter, shifting, f"{response} | {intercept} ~ {shift}")
    return ModelSpec(
        response=resp[0].name,
        interacting=(Term("intercept", "1"),) + tuple(inter),
        shifting=tuple(shifting),
        suppress_shift_intercept=suppress,
    )


def format_formula(spec: ModelSpec) -> str:
    """Canonical text for ``spec``; reparses to an identical AST."""
    lhs = spec.response
    inter = [t.source() for t in spec.interacting if t.kind != "intercept"]
    if inter:
        lhs += " | " + " + ".join(inter)
    rhs = [t.source() for t in spec.shifting]
    if spec.suppress_shift_intercept:
        rhs = ["0"] + rhs
    elif not rhs:
        rhs = ["1"]
    return f"{lhs} ~ {' + '.join(rhs)}"


def resolve_terms(spec: ModelSpec, categorical) -> ModelSpec:
    """Turn bare ``var`` terms into factor (categorical column) or linear terms."""
    categorical = set(categorical)

    def fix(t):
        if t.kind != "var":
            return t
        if t.name in categorical:
            return replace(t, kind="factor", bare=True)
        return replace(t, kind="linear")

    return replace(
        spec,
        interacting=tuple(fix(t) for t in spec.interacting),
        shifting=tuple(fix(t) for t in spec.shifting),
    )
