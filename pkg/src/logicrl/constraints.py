"""Textual first-order safety-constraint language over state vectors.

Formulas combine p-norm distance atoms and state-component bounds with
boolean connectives and bounded universal quantification over named sets of
anchor points. Grammar (EBNF):

    formula    := disj
    disj       := conj ("or" conj)*
    conj       := unit ("and" unit)*
    unit       := "not" unit
                | "(" formula ")"
                | ("forall" | "exists") IDENT "in" IDENT ":" unit
                | comparison
    comparison := expr CMP expr            CMP in { <= < >= > }
    expr       := ["-"] NUMBER | "s" "[" INT "]" | norm
    norm       := ("norm1"|"norm2"|"norminf") "(" ref "-" ref ")"
    ref        := "s" | "s" "." IDENT | IDENT | point
    point      := "[" ["-"] NUMBER ("," ["-"] NUMBER)* "]"

"#" starts a comment running to end of line. Constraint files (.fl) hold one
formula, possibly spanning lines. "exists" is sugar for not-forall-not.

A parsed Formula is bound against an ObjectRegistry (quantifier domains) and
a state schema (component count, named slices) to produce a BoundFormula
that evaluates states, one at a time or as a batch of rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

CMP_OPS = ("<=", "<", ">=", ">")

_KEYWORDS = {"and", "or", "not", "forall", "exists", "in"}
_NORM_NAMES = {"norm1": 1.0, "norm2": 2.0, "norminf": math.inf}


class FLSyntaxError(ValueError):
    """Lexical or grammatical error, carrying 1-based line and column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class BindError(ValueError):
    """Formula refers to something the registry or schema does not provide."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Literal:
    value: float


@dataclass(frozen=True)
class Component:
    index: int


@dataclass(frozen=True)
class StateRef:
    """The full state vector, or a named slice of it."""

    slice_name: Optional[str] = None


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class PointLiteral:
    values: tuple[float, ...]


VectorExpr = Union[StateRef, VarRef, PointLiteral]


@dataclass(frozen=True)
class NormDistance:
    p: float
    left: VectorExpr
    right: VectorExpr


ScalarExpr = Union[Literal, Component, NormDistance]


@dataclass(frozen=True)
class Comparison:
    lhs: ScalarExpr
    op: str
    rhs: ScalarExpr


@dataclass(frozen=True)
class Atom:
    cmp: Comparison


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple["Formula", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("And needs at least 2 children")


@dataclass(frozen=True)
class Or:
    children: tuple["Formula", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("Or needs at least 2 children")


@dataclass(frozen=True)
class ForAll:
    var: str
    set_name: str
    body: "Formula"


Formula = Union[Atom, Not, And, Or, ForAll]


# ---------------------------------------------------------------------------
# Object registry


class ObjectRegistry:
    """Named finite sets of anchor points that quantifiers range over.

    Each set is an (m, k) array of points, optionally tagged with the name of
    the state slice those points live in.
    """

    def __init__(self):
        self.sets: dict[str, tuple[np.ndarray, Optional[str]]] = {}

    def add_set(self, name: str, points, slice_name: Optional[str] = None) -> None:
        if name in self.sets:
            raise ValueError(f"registry set {name!r} already exists")
        arr = np.asarray(points, dtype=np.float64)
        if arr.size == 0:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise ValueError(f"set {name!r}: points must form an (m, k) array")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"set {name!r}: non-finite anchor point")
        self.sets[name] = (arr, slice_name)

    def names(self) -> list[str]:
        return list(self.sets)

    def points(self, name: str) -> np.ndarray:
        return self.sets[name][0]

    def slice_tag(self, name: str) -> Optional[str]:
        return self.sets[name][1]

    def __contains__(self, name: str) -> bool:
        return name in self.sets

    def __len__(self) -> int:
        return len(self.sets)


# ---------------------------------------------------------------------------
# Norms


def norm_distance(point_a, point_b, p: float = 2.0) -> float:
    """Minkowski distance between two equal-length points; p >= 1 or inf."""
    a = np.asarray(point_a, dtype=np.float64)
    b = np.asarray(point_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (p == math.inf or p >= 1.0):
        raise ValueError(f"norm order must be >= 1 or inf, got {p}")
    diff = np.abs(a - b)
    if p == math.inf:
        return float(diff.max(initial=0.0))
    if p == 1.0:
        return float(diff.sum())
    if p == 2.0:
        return float(np.sqrt(np.sum(diff * diff)))
    return float(np.sum(diff**p) ** (1.0 / p))


def _norm_rows(diff: np.ndarray, p: float) -> np.ndarray:
    """p-norm along the last axis."""
    a = np.abs(diff)
    if p == math.inf:
        return a.max(axis=-1)
    if p == 1.0:
        return a.sum(axis=-1)
    if p == 2.0:
        return np.sqrt(np.sum(a * a, axis=-1))
    return np.sum(a**p, axis=-1) ** (1.0 / p)


# ---------------------------------------------------------------------------
# Lexer


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(source)
    simple = {
        "(": "LPAREN", ")": "RPAREN", "[": "LBRACKET", "]": "RBRACKET",
        ",": "COMMA", ":": "COLON", "-": "MINUS", ".": "DOT",
    }
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_col = col
        if ch in simple:
            tokens.append(_Token(simple[ch], ch, line, start_col))
            i += 1
            col += 1
            continue
        if ch in "<>":
            if i + 1 < n and source[i + 1] == "=":
                tokens.append(_Token("CMP", ch + "=", line, start_col))
                i += 2
                col += 2
            else:
                tokens.append(_Token("CMP", ch, line, start_col))
                i += 1
                col += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            tokens.append(_Token("NUMBER", text, line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            kind = text.upper() if text in _KEYWORDS else "IDENT"
            tokens.append(_Token(kind, text, line, start_col))
            col += j - i
            i = j
            continue
        raise FLSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent following the grammar above)


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.cur
        self.pos += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        if self.cur.kind != kind:
            self.fail(f"expected {what}, got {self.cur.text or 'end of input'!r}")
        return self.advance()

    def fail(self, message: str):
        raise FLSyntaxError(message, self.cur.line, self.cur.col)

    def parse(self) -> Formula:
        f = self.formula()
        if self.cur.kind != "EOF":
            self.fail(f"trailing input {self.cur.text!r}")
        return f

    def formula(self) -> Formula:
        parts = [self.conj()]
        while self.cur.kind == "OR":
            self.advance()
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conj(self) -> Formula:
        parts = [self.unit()]
        while self.cur.kind == "AND":
            self.advance()
            parts.append(self.unit())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def unit(self) -> Formula:
        kind = self.cur.kind
        if kind == "NOT":
            self.advance()
            return Not(self.unit())
        if kind == "LPAREN":
            self.advance()
            inner = self.formula()
            self.expect("RPAREN", "')'")
            return inner
        if kind in ("FORALL", "EXISTS"):
            exists = kind == "EXISTS"
            self.advance()
            var = self.expect("IDENT", "a variable name").text
            self.expect("IN", "'in'")
            set_name = self.expect("IDENT", "a set name").text
            self.expect("COLON", "':'")
            body = self.unit()
            if exists:
                return Not(ForAll(var, set_name, Not(body)))
            return ForAll(var, set_name, body)
        return self.comparison()

    def comparison(self) -> Formula:
        lhs = self.scalar_expr()
        if self.cur.kind != "CMP":
            self.fail(f"expected a comparison operator, got {self.cur.text or 'end of input'!r}")
        op = self.advance().text
        rhs = self.scalar_expr()
        return Atom(Comparison(lhs, op, rhs))

    def scalar_expr(self) -> ScalarExpr:
        tok = self.cur
        if tok.kind == "MINUS":
            self.advance()
            num = self.expect("NUMBER", "a number")
            return Literal(-float(num.text))
        if tok.kind == "NUMBER":
            self.advance()
            return Literal(float(tok.text))
        if tok.kind == "IDENT":
            if tok.text in _NORM_NAMES:
                return self.norm()
            if tok.text == "s":
                self.advance()
                self.expect("LBRACKET", "'[' (component index)")
                idx = self.expect("NUMBER", "a component index")
                if "." in idx.text or "e" in idx.text or "E" in idx.text:
                    raise FLSyntaxError("component index must be an integer", idx.line, idx.col)
                self.expect("RBRACKET", "']'")
                return Component(int(idx.text))
        self.fail(f"expected a number, s[i] or a norm, got {tok.text or 'end of input'!r}")

    def norm(self) -> NormDistance:
        name = self.advance()
        p = _NORM_NAMES[name.text]
        self.expect("LPAREN", "'('")
        left = self.vector_ref()
        self.expect("MINUS", "'-'")
        right = self.vector_ref()
        self.expect("RPAREN", "')'")
        return NormDistance(p, left, right)

    def vector_ref(self) -> VectorExpr:
        tok = self.cur
        if tok.kind == "IDENT":
            self.advance()
            if tok.text == "s":
                if self.cur.kind == "DOT":
                    self.advance()
                    slice_name = self.expect("IDENT", "a slice name").text
                    return StateRef(slice_name)
                return StateRef(None)
            return VarRef(tok.text)
        if tok.kind == "LBRACKET":
            self.advance()
            values = [self.signed_number()]
            while self.cur.kind == "COMMA":
                self.advance()
                values.append(self.signed_number())
            self.expect("RBRACKET", "']'")
            return PointLiteral(tuple(values))
        self.fail(f"expected s, s.<slice>, a variable or a point, got {tok.text or 'end of input'!r}")

    def signed_number(self) -> float:
        neg = False
        if self.cur.kind == "MINUS":
            self.advance()
            neg = True
        tok = self.expect("NUMBER", "a number")
        v = float(tok.text)
        return -v if neg else v


def parse(source: str) -> Formula:
    """Parse a formula; raises FLSyntaxError with position on bad input."""
    return _Parser(source).parse()


def load_constraint_file(path) -> Formula:
    """Read a .fl file (one formula, '#' comments) and parse it."""
    with open(path) as fp:
        return parse(fp.read())


# ---------------------------------------------------------------------------
# Rendering


def _fmt_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _norm_keyword(p: float) -> str:
    for name, order in _NORM_NAMES.items():
        if order == p:
            return name
    raise ValueError(f"no textual form for norm order {p}")


def _ref_text(ref: VectorExpr) -> str:
    if isinstance(ref, StateRef):
        return "s" if ref.slice_name is None else f"s.{ref.slice_name}"
    if isinstance(ref, VarRef):
        return ref.name
    return "[" + ",".join(_fmt_number(v) for v in ref.values) + "]"


def _expr_text(expr: ScalarExpr) -> str:
    if isinstance(expr, Literal):
        return _fmt_number(expr.value)
    if isinstance(expr, Component):
        return f"s[{expr.index}]"
    return f"{_norm_keyword(expr.p)}({_ref_text(expr.left)} - {_ref_text(expr.right)})"


def to_text(formula: Formula) -> str:
    """Canonical rendering; parse(to_text(f)) is structurally equal to f."""

    def unit(f: Formula) -> str:
        if isinstance(f, Atom):
            c = f.cmp
            return f"{_expr_text(c.lhs)} {c.op} {_expr_text(c.rhs)}"
        if isinstance(f, Not):
            return "not " + unit(f.child)
        if isinstance(f, ForAll):
            return f"forall {f.var} in {f.set_name}: " + unit(f.body)
        return "(" + full(f) + ")"

    def conj(f: Formula) -> str:
        if isinstance(f, And):
            return " and ".join(unit(c) for c in f.children)
        return unit(f)

    def full(f: Formula) -> str:
        if isinstance(f, Or):
            return " or ".join(conj(c) for c in f.children)
        return conj(f)

    return full(formula)


# ---------------------------------------------------------------------------
# DNF normalizer (diagnostics only; quantified subformulas treated as literals)


def to_dnf(formula: Formula) -> Formula:
    """Push negations inward and distribute `and` over `or`."""

    def nnf(f: Formula, negate: bool) -> Formula:
        if isinstance(f, Not):
            return nnf(f.child, not negate)
        if isinstance(f, And):
            kids = tuple(nnf(c, negate) for c in f.children)
            return Or(kids) if negate else And(kids)
        if isinstance(f, Or):
            kids = tuple(nnf(c, negate) for c in f.children)
            return And(kids) if negate else Or(kids)
        return Not(f) if negate else f

    def distribute(f: Formula) -> Formula:
        if isinstance(f, Or):
            flat: list[Formula] = []
            for c in f.children:
                d = distribute(c)
                flat.extend(d.children if isinstance(d, Or) else [d])
            return Or(tuple(flat)) if len(flat) > 1 else flat[0]
        if isinstance(f, And):
            branches: list[list[Formula]] = [[]]
            for c in f.children:
                d = distribute(c)
                terms = list(d.children) if isinstance(d, Or) else [d]
                branches = [b + [t] for b in branches for t in terms]
            clauses: list[Formula] = []
            for b in branches:
                flat: list[Formula] = []
                for t in b:
                    flat.extend(t.children if isinstance(t, And) else [t])
                clauses.append(And(tuple(flat)) if len(flat) > 1 else flat[0])
            return Or(tuple(clauses)) if len(clauses) > 1 else clauses[0]
        return f

    return distribute(nnf(formula, False))


# ---------------------------------------------------------------------------
# Binding and evaluation


_CMP_FN = {
    "<=": lambda a, b: a <= b,
    "<": lambda a, b: a < b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}


class BoundFormula:
    """A formula closed over a registry and schema, ready to score states."""

    def __init__(self, formula: Formula, registry: ObjectRegistry, schema):
        self.formula = formula
        self.registry = registry
        self.schema = schema
        self._slices = {name: tuple(idx) for name, idx in schema.slices.items()}
        self._check(formula, {})

    # -- validation ---------------------------------------------------------

    def _slice_indices(self, name: str) -> tuple[int, ...]:
        if name not in self._slices:
            raise BindError(f"unknown state slice {name!r}; schema has {sorted(self._slices)}")
        return self._slices[name]

    def _vector_dim(self, ref: VectorExpr, var_dims: dict[str, int]) -> int:
        if isinstance(ref, StateRef):
            if ref.slice_name is None:
                return self.schema.size
            return len(self._slice_indices(ref.slice_name))
        if isinstance(ref, VarRef):
            if ref.name not in var_dims:
                raise BindError(f"unknown identifier {ref.name!r} (not bound by any quantifier)")
            return var_dims[ref.name]
        return len(ref.values)

    def _check_expr(self, expr: ScalarExpr, var_dims: dict[str, int]) -> None:
        if isinstance(expr, Component):
            if not 0 <= expr.index < self.schema.size:
                raise BindError(
                    f"component s[{expr.index}] out of range for schema of size {self.schema.size}"
                )
        elif isinstance(expr, NormDistance):
            ld = self._vector_dim(expr.left, var_dims)
            rd = self._vector_dim(expr.right, var_dims)
            # -1 marks a variable over an empty (vacuous) set: width unknown
            if ld != rd and ld != -1 and rd != -1:
                raise BindError(
                    f"norm operands have different dimensions ({ld} vs {rd}); "
                    "use a state slice (s.<name>) to select matching components"
                )

    def _check(self, f: Formula, var_dims: dict[str, int]) -> None:
        if isinstance(f, Atom):
            self._check_expr(f.cmp.lhs, var_dims)
            self._check_expr(f.cmp.rhs, var_dims)
        elif isinstance(f, Not):
            self._check(f.child, var_dims)
        elif isinstance(f, (And, Or)):
            for c in f.children:
                self._check(c, var_dims)
        elif isinstance(f, ForAll):
            if f.set_name not in self.registry:
                raise BindError(f"unknown object set {f.set_name!r}")
            points = self.registry.points(f.set_name)
            if len(points) == 0:
                # vacuous domain: the body still must be well-formed, but the
                # bound variable has no known width; treat it as matching.
                self._check(f.body, {**var_dims, f.var: -1})
            else:
                self._check(f.body, {**var_dims, f.var: points.shape[1]})

    # -- evaluation ---------------------------------------------------------

    def _vector_values(self, ref: VectorExpr, states: np.ndarray, binding: dict):
        if isinstance(ref, StateRef):
            if ref.slice_name is None:
                return states
            return states[:, self._slice_indices(ref.slice_name)]
        if isinstance(ref, VarRef):
            return binding[ref.name]
        return np.asarray(ref.values)

    def _scalar_values(self, expr: ScalarExpr, states: np.ndarray, binding: dict):
        if isinstance(expr, Literal):
            return expr.value
        if isinstance(expr, Component):
            return states[:, expr.index]
        left = self._vector_values(expr.left, states, binding)
        right = self._vector_values(expr.right, states, binding)
        if left.shape[-1] != right.shape[-1]:
            raise BindError(
                f"norm operands have different dimensions "
                f"({left.shape[-1]} vs {right.shape[-1]})"
            )
        return _norm_rows(left - right, expr.p)

    def _eval(self, f: Formula, states: np.ndarray, binding: dict) -> np.ndarray:
        n = states.shape[0]
        if isinstance(f, Atom):
            lhs = self._scalar_values(f.cmp.lhs, states, binding)
            rhs = self._scalar_values(f.cmp.rhs, states, binding)
            out = _CMP_FN[f.cmp.op](lhs, rhs)
            if np.isscalar(out) or getattr(out, "ndim", 1) == 0:
                return np.full(n, bool(out))
            return out
        if isinstance(f, Not):
            return ~self._eval(f.child, states, binding)
        if isinstance(f, And):
            acc = np.ones(n, dtype=bool)
            for c in f.children:
                acc &= self._eval(c, states, binding)
                if not acc.any():
                    break
            return acc
        if isinstance(f, Or):
            acc = np.zeros(n, dtype=bool)
            for c in f.children:
                acc |= self._eval(c, states, binding)
                if acc.all():
                    break
            return acc
        # ForAll: conjunction over every anchor in the set; empty set is true
        points = self.registry.points(f.set_name)
        fast = self._forall_fast(f, states, points, binding)
        if fast is not None:
            return fast
        acc = np.ones(n, dtype=bool)
        for point in points:
            acc &= self._eval(f.body, states, {**binding, f.var: point})
            if not acc.any():
                break
        return acc

    def _forall_fast(self, f: ForAll, states, points, binding):
        """Vectorized path for the common `forall v: <norm vs scalar>` body."""
        body = f.body
        if not isinstance(body, Atom) or len(points) == 0:
            return None
        cmp = body.cmp
        for norm_side, other, op in ((cmp.lhs, cmp.rhs, cmp.op),
                                     (cmp.rhs, cmp.lhs, _flip(cmp.op))):
            if not isinstance(norm_side, NormDistance):
                continue
            refs = (norm_side.left, norm_side.right)
            var_refs = [r for r in refs if isinstance(r, VarRef) and r.name == f.var]
            if len(var_refs) != 1 or _mentions_var(other, f.var):
                continue
            state_side = refs[0] if refs[1] is var_refs[0] else refs[1]
            if not isinstance(state_side, StateRef):
                continue
            vals = self._vector_values(state_side, states, binding)
            if vals.shape[-1] != points.shape[1]:
                raise BindError(
                    f"norm operands have different dimensions "
                    f"({vals.shape[-1]} vs {points.shape[1]})"
                )
            dists = _norm_rows(vals[:, None, :] - points[None, :, :], norm_side.p)
            bound = self._scalar_values(other, states, binding)
            bound = bound[:, None] if isinstance(bound, np.ndarray) else bound
            return np.all(_CMP_FN[op](dists, bound), axis=1)
        return None

    def evaluate_batch(self, states) -> np.ndarray:
        """Boolean satisfaction for each row of an (n, size) state matrix."""
        arr = np.asarray(states, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.schema.size:
            raise ValueError(
                f"expected states of shape (n, {self.schema.size}), got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite state components")
        return self._eval(self.formula, arr, {})

    def evaluate(self, state) -> bool:
        arr = np.asarray(state, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("expected a single 1-D state")
        return bool(self.evaluate_batch(arr[None, :])[0])


def _flip(op: str) -> str:
    return {"<=": ">=", "<": ">", ">=": "<=", ">": "<"}[op]


def _mentions_var(expr: ScalarExpr, var: str) -> bool:
    if isinstance(expr, NormDistance):
        return any(isinstance(r, VarRef) and r.name == var for r in (expr.left, expr.right))
    return False


def bind(formula: Formula, registry: ObjectRegistry, schema) -> BoundFormula:
    """Resolve set and slice names; returns an evaluation-ready BoundFormula."""
    return BoundFormula(formula, registry, schema)


def evaluate(bound: BoundFormula, state) -> bool:
    """Boolean satisfaction of a bound formula at one state."""
    return bound.evaluate(state)
