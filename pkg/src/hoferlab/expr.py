"""Closed-form expression DSL for Hamiltonians, profiles and generating functions.

Grammar (EBNF):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' INT)?
    atom   := NUMBER | VAR | FUNC '(' expr ')'
            | 'bump' '(' expr ';' NUMBER ')' | '(' expr ')'
    VAR    := 'x'|'y'|'z'|'t'
    FUNC   := 'sin'|'cos'|'exp'|'sqrt'|'neg'
    NUMBER := decimal literal

`bump(r; R)` is a fixed quintic ramp: 1 for r <= 0, 0 for r >= R, C^2
monotone between; its closed-form derivatives are available to any order,
so the whole AST family is closed under differentiation. Exponents are
constant non-negative integers. Division requires the denominator to be
certifiably bounded away from zero on the declared domain (sampled at
parse time).

Compiled fields evaluate through generated numpy code and are immutable,
so they are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnguardedDivision, UnknownVariable
from .numerics import halton

VARS = ("x", "y", "z", "t")
FUNCS = ("sin", "cos", "exp", "sqrt", "neg")

_DEFAULT_DOMAIN = {"x": (-3.0, 3.0), "y": (-3.0, 3.0), "z": (-3.0, 3.0), "t": (0.0, 1.0)}
_GUARD_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # sin cos exp sqrt neg sabs
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str  # + - * /
    left: object
    right: object
    guarded: bool = False  # division only: denominator certified positive


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Bump:
    arg: object
    radius: float
    order: int = 0  # derivative order of the ramp profile w.r.t. its argument


Expr = object  # structural union of the node dataclasses above


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------

_SINGLE = set("+-*/^();")


def _tokenize(src):
    tokens = []
    i, n = 0, len(src)
    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _SINGLE:
            tokens.append((ch, ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and src[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (src[j].isdigit() or (src[j] == "." and not seen_dot)):
                if src[j] == ".":
                    seen_dot = True
                j += 1
            if j < n and src[j] in "eE":
                k = j + 1
                if k < n and src[k] in "+-":
                    k += 1
                if k < n and src[k].isdigit():
                    while k < n and src[k].isdigit():
                        k += 1
                    j = k
            tokens.append(("NUMBER", src[i:j], i))
            i = j
            continue
        if ch.isalpha():
            j = i
            while j < n and src[j].isalpha():
                j += 1
            word = src[i:j]
            if word in VARS:
                tokens.append(("VAR", word, i))
            elif word in FUNCS or word == "bump":
                tokens.append(("FUNC", word, i))
            else:
                raise ExprSyntaxError(
                    f"unknown name {word!r} at position {i}", position=i,
                    expected=("VAR", "FUNC"))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r} at position {i}",
                              position=i, expected=("token",))
    tokens.append(("END", "", n))
    return tokens


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise ExprSyntaxError(
                f"expected {kind} at position {tok[2]}, found {tok[1]!r}",
                position=tok[2], expected=(kind,))
        self.pos += 1
        return tok

    def parse_expr(self):
        node = self.parse_term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            node = Bin(op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_factor()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            node = Bin(op, node, self.parse_factor())
        return node

    def parse_factor(self):
        node = self.parse_atom()
        if self.peek()[0] == "^":
            self.take()
            tok = self.take("NUMBER")
            raw = tok[1]
            if any(c in raw for c in ".eE"):
                raise ExprSyntaxError(
                    f"exponent must be a constant integer at position {tok[2]}",
                    position=tok[2], expected=("INT",))
            node = Pow(node, int(raw))
        return node

    def parse_atom(self):
        kind, text, pos = self.peek()
        if kind == "NUMBER":
            self.take()
            return Num(float(text))
        if kind == "VAR":
            self.take()
            return Var(text)
        if kind == "FUNC":
            self.take()
            self.take("(")
            arg = self.parse_expr()
            if text == "bump":
                self.take(";")
                rtok = self.take("NUMBER")
                radius = float(rtok[1])
                if radius <= 0:
                    raise ExprSyntaxError(
                        f"bump radius must be positive at position {rtok[2]}",
                        position=rtok[2], expected=("NUMBER>0",))
                self.take(")")
                return Bump(arg, radius)
            self.take(")")
            return Unary(text, arg)
        if kind == "(":
            self.take()
            node = self.parse_expr()
            self.take(")")
            return node
        raise ExprSyntaxError(
            f"unexpected token {text!r} at position {pos}", position=pos,
            expected=("NUMBER", "VAR", "FUNC", "("))


def free_vars(node):
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Unary):
        return free_vars(node.arg)
    if isinstance(node, Bump):
        return free_vars(node.arg)
    if isinstance(node, Pow):
        return free_vars(node.base)
    return free_vars(node.left) | free_vars(node.right)


def parse(source, admitted=None, domain=None):
    """Parse DSL source into an AST.

    `admitted`, if given, restricts variable names (UnknownVariable
    otherwise). Division nodes are guarded by sampling the denominator over
    `domain` (dict var -> (lo, hi), defaults cover the catalog boxes);
    a denominator approaching zero or changing sign raises UnguardedDivision.
    """
    p = _Parser(_tokenize(source))
    ast = p.parse_expr()
    if p.peek()[0] != "END":
        kind, text, pos = p.peek()
        raise ExprSyntaxError(f"trailing input {text!r} at position {pos}",
                              position=pos, expected=("END",))
    if admitted is not None:
        bad = free_vars(ast) - set(admitted)
        if bad:
            raise UnknownVariable(
                f"variables {sorted(bad)} not admitted (chart admits {sorted(admitted)})")
    ast = _register_guards(ast, domain or _DEFAULT_DOMAIN)
    return fold(ast)


def _register_guards(node, domain):
    if isinstance(node, (Num, Var)):
        return node
    if isinstance(node, Unary):
        return Unary(node.op, _register_guards(node.arg, domain))
    if isinstance(node, Bump):
        return Bump(_register_guards(node.arg, domain), node.radius, node.order)
    if isinstance(node, Pow):
        return Pow(_register_guards(node.base, domain), node.exponent)
    left = _register_guards(node.left, domain)
    right = _register_guards(node.right, domain)
    if node.op == "/":
        names = sorted(free_vars(right))
        if names:
            pts = halton(512, dim=max(1, len(names)))
            bindings = {}
            for k, name in enumerate(names):
                lo, hi = domain.get(name, _DEFAULT_DOMAIN[name])
                bindings[name] = lo + (hi - lo) * pts[:, k]
            vals = evaluate(right, bindings, check=False)
        else:
            vals = np.array([evaluate(right, {}, check=False)])
        if (not np.all(np.isfinite(vals))) or float(np.min(np.abs(vals))) < _GUARD_FLOOR \
                or float(np.min(vals)) * float(np.max(vals)) <= 0.0:
            raise UnguardedDivision(
                "denominator not certifiably bounded away from zero on the domain")
        return Bin("/", left, right, guarded=True)
    return Bin(node.op, left, right)


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "pow": 3, "atom": 4}


def to_source(node):
    """Render an AST back to DSL source (minimal parentheses)."""
    return _print(node, 0)


def _print(node, parent_prec):
    if isinstance(node, Num):
        v = node.value
        s = repr(v) if v >= 0 else f"(0 - {repr(-v)})"
        return s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        return f"{node.op}({_print(node.arg, 0)})"
    if isinstance(node, Bump):
        inner = f"bump({_print(node.arg, 0)}; {repr(node.radius)})"
        if node.order:
            return f"{inner}[d{node.order}]"  # programmatic nodes only
        return inner
    if isinstance(node, Pow):
        s = f"{_print(node.base, _PREC['pow'])}^{node.exponent}"
        return f"({s})" if parent_prec > _PREC["pow"] else s
    prec = _PREC[node.op]
    left = _print(node.left, prec)
    right = _print(node.right, prec + 1)  # - and / are left-associative
    s = f"{left} {node.op} {right}"
    return f"({s})" if parent_prec > prec else s


# ---------------------------------------------------------------------------
# bump profile and its derivatives
# ---------------------------------------------------------------------------

# ramp(u) = 1 - (10u^3 - 15u^4 + 6u^5) on [0,1]; derivative coefficient
# tables for orders 0..5 (degree-5 polynomial, higher orders vanish).
_RAMP_COEFFS = []
_c = np.array([1.0, 0.0, 0.0, -10.0, 15.0, -6.0])  # a_k u^k
for _order in range(6):
    _RAMP_COEFFS.append(_c.copy())
    _c = np.array([_c[k] * k for k in range(1, len(_c))] + [0.0])


_RAMP_HORNER = [tuple(c[::-1]) for c in _RAMP_COEFFS]  # high -> low


def bump_profile(r, radius, order=0):
    """Evaluate the C^2 bump ramp (or its order-th derivative) at r."""
    r = np.asarray(r, dtype=float)
    if order >= 6:
        return np.zeros_like(r)
    u = r * (1.0 / radius)
    uc = np.clip(u, 0.0, 1.0)
    cs = _RAMP_HORNER[order]
    inside = np.full_like(uc, cs[0])
    for c in cs[1:]:
        inside = inside * uc + c
    if order == 0:
        return np.where(u <= 0.0, 1.0, np.where(u >= 1.0, 0.0, inside))
    inside *= radius ** -order
    return np.where((u <= 0.0) | (u >= 1.0), 0.0, inside)


def _sabs(v, eps=1e-6):
    return np.sqrt(v * v + eps * eps)


def _sabs_d1(v, eps=1e-6):
    return v / np.sqrt(v * v + eps * eps)


# ---------------------------------------------------------------------------
# differentiation and folding
# ---------------------------------------------------------------------------

def differentiate(node, var):
    """Symbolic partial derivative; closed over the AST node family."""
    if var not in VARS:
        raise UnknownVariable(f"cannot differentiate with respect to {var!r}")
    return fold(_diff(node, var))


def _diff(node, var):
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0 if node.name == var else 0.0)
    if isinstance(node, Unary):
        inner = _diff(node.arg, var)
        if node.op == "neg":
            return Unary("neg", inner)
        if node.op == "sin":
            outer = Unary("cos", node.arg)
        elif node.op == "cos":
            outer = Unary("neg", Unary("sin", node.arg))
        elif node.op == "exp":
            outer = node
        elif node.op == "sqrt":
            outer = Bin("/", Num(0.5), node, guarded=True)
        elif node.op == "sabs":
            outer = Bin("/", node.arg, Unary("sabs", node.arg), guarded=True)
        else:  # pragma: no cover
            raise ValueError(node.op)
        return Bin("*", outer, inner)
    if isinstance(node, Bump):
        return Bin("*", Bump(node.arg, node.radius, node.order + 1),
                   _diff(node.arg, var))
    if isinstance(node, Pow):
        k = node.exponent
        if k == 0:
            return Num(0.0)
        return Bin("*", Bin("*", Num(float(k)), Pow(node.base, k - 1)),
                   _diff(node.base, var))
    if node.op in ("+", "-"):
        return Bin(node.op, _diff(node.left, var), _diff(node.right, var))
    if node.op == "*":
        return Bin("+", Bin("*", _diff(node.left, var), node.right),
                   Bin("*", node.left, _diff(node.right, var)))
    # quotient rule; the squared denominator inherits the guard
    num = Bin("-", Bin("*", _diff(node.left, var), node.right),
              Bin("*", node.left, _diff(node.right, var)))
    return Bin("/", num, Pow(node.right, 2), guarded=True)


def fold(node):
    """Safe local simplification: constant folding and unit/zero pruning."""
    if isinstance(node, (Num, Var)):
        return node
    if isinstance(node, Unary):
        arg = fold(node.arg)
        if isinstance(arg, Num):
            f = {"sin": math.sin, "cos": math.cos, "exp": math.exp,
                 "neg": lambda v: -v, "sabs": _sabs}.get(node.op)
            if node.op == "sqrt":
                if arg.value >= 0:
                    return Num(math.sqrt(arg.value))
            elif f is not None:
                return Num(float(f(arg.value)))
        if node.op == "neg" and isinstance(arg, Unary) and arg.op == "neg":
            return arg.arg
        return Unary(node.op, arg)
    if isinstance(node, Bump):
        return Bump(fold(node.arg), node.radius, node.order)
    if isinstance(node, Pow):
        base = fold(node.base)
        if node.exponent == 0:
            return Num(1.0)
        if node.exponent == 1:
            return base
        if isinstance(base, Num):
            return Num(base.value ** node.exponent)
        return Pow(base, node.exponent)
    left, right = fold(node.left), fold(node.right)
    if isinstance(left, Num) and isinstance(right, Num):
        if node.op == "+":
            return Num(left.value + right.value)
        if node.op == "-":
            return Num(left.value - right.value)
        if node.op == "*":
            return Num(left.value * right.value)
        if node.op == "/" and right.value != 0:
            return Num(left.value / right.value)
    if node.op == "+":
        if isinstance(left, Num) and left.value == 0:
            return right
        if isinstance(right, Num) and right.value == 0:
            return left
    if node.op == "-":
        if isinstance(right, Num) and right.value == 0:
            return left
    if node.op == "*":
        for a, b in ((left, right), (right, left)):
            if isinstance(a, Num):
                if a.value == 0:
                    return Num(0.0)
                if a.value == 1:
                    return b
    if node.op == "/":
        if isinstance(left, Num) and left.value == 0:
            return Num(0.0)
        if isinstance(right, Num) and right.value == 1:
            return left
    return Bin(node.op, left, right, getattr(node, "guarded", False))


def subst(node, var, replacement):
    """Substitute an AST for every occurrence of a variable."""
    if isinstance(node, Num):
        return node
    if isinstance(node, Var):
        return replacement if node.name == var else node
    if isinstance(node, Unary):
        return Unary(node.op, subst(node.arg, var, replacement))
    if isinstance(node, Bump):
        return Bump(subst(node.arg, var, replacement), node.radius, node.order)
    if isinstance(node, Pow):
        return Pow(subst(node.base, var, replacement), node.exponent)
    return Bin(node.op, subst(node.left, var, replacement),
               subst(node.right, var, replacement), getattr(node, "guarded", False))


# ---------------------------------------------------------------------------
# evaluation: tree walker (reference) and compiled fields
# ---------------------------------------------------------------------------

def evaluate(node, bindings, check=True):
    """Reference tree-walking evaluation; bindings map var -> scalar/array."""
    val = _eval(node, bindings, check)
    return val


def _eval(node, b, check):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in b:
            raise UnknownVariable(f"unbound variable {node.name!r}")
        return b[node.name]
    if isinstance(node, Unary):
        v = _eval(node.arg, b, check)
        if node.op == "sin":
            return np.sin(v)
        if node.op == "cos":
            return np.cos(v)
        if node.op == "exp":
            return np.exp(v)
        if node.op == "neg":
            return -np.asarray(v) if isinstance(v, np.ndarray) else -v
        if node.op == "sabs":
            return _sabs(v)
        if check and np.any(np.asarray(v) < 0):
            raise DomainError("sqrt of negative value")
        return np.sqrt(np.maximum(v, 0.0) if not check else v)
    if isinstance(node, Bump):
        return bump_profile(_eval(node.arg, b, check), node.radius, node.order)
    if isinstance(node, Pow):
        return _eval(node.base, b, check) ** node.exponent
    l = _eval(node.left, b, check)
    r = _eval(node.right, b, check)
    if node.op == "+":
        return l + r
    if node.op == "-":
        return l - r
    if node.op == "*":
        return l * r
    if check and np.any(np.abs(np.asarray(r)) < 1e-12):
        raise DomainError("division guard violated (denominator ~ 0)")
    return l / r


_COMPILE_ENV = {
    "np": np,
    "_bump": bump_profile,
    "_sabs": _sabs,
}


def _codegen(node):
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        inner = _codegen(node.arg)
        return {
            "sin": f"np.sin({inner})",
            "cos": f"np.cos({inner})",
            "exp": f"np.exp({inner})",
            "sqrt": f"np.sqrt({inner})",
            "neg": f"(-({inner}))",
            "sabs": f"_sabs({inner})",
        }[node.op]
    if isinstance(node, Bump):
        return f"_bump({_codegen(node.arg)}, {repr(node.radius)}, {node.order})"
    if isinstance(node, Pow):
        return f"(({_codegen(node.base)})**{node.exponent})"
    return f"(({_codegen(node.left)}) {node.op} ({_codegen(node.right)}))"


def compile_ast(node):
    """Compile an AST to a numpy-vectorized callable of (x, y, z, t)."""
    src = f"def _field(x=0.0, y=0.0, z=0.0, t=0.0):\n    return ({_codegen(node)})\n"
    ns = dict(_COMPILE_ENV)
    exec(src, ns)  # noqa: S102 - generated from a closed AST grammar
    return ns["_field"]


class ScalarField:
    """Compiled expression with cached symbolic first and second partials.

    Immutable; evaluation is vectorized over numpy arrays. `wrt` lists the
    chart variables the gradient/Hessian helpers differentiate against.
    """

    def __init__(self, ast, wrt=("x", "y"), source=None):
        if isinstance(ast, str):
            source = ast
            ast = parse(ast)
        self.ast = ast
        self.source = source if source is not None else to_source(ast)
        self.wrt = tuple(wrt)
        self.free = frozenset(free_vars(ast))
        self._fn = compile_ast(ast)
        self._grads = {v: fold(differentiate(ast, v)) for v in self.wrt}
        self._grad_fns = {v: compile_ast(a) for v, a in self._grads.items()}
        self._hess = {}
        self._hess_fns = {}
        for v1 in self.wrt:
            for v2 in self.wrt:
                key = (v1, v2)
                a = fold(differentiate(self._grads[v1], v2))
                self._hess[key] = a
                self._hess_fns[key] = compile_ast(a)

    @property
    def time_dependent(self):
        return "t" in self.free

    def __call__(self, **bindings):
        out = self._fn(**bindings)
        if np.any(~np.isfinite(np.asarray(out))):
            raise DomainError(f"evaluation of {self.source!r} left the domain")
        return out

    def value(self, **bindings):
        return self._fn(**bindings)

    def grad(self, **bindings):
        shape = np.broadcast_shapes(*[np.shape(b) for b in bindings.values()]) \
            if bindings else ()
        cols = [np.broadcast_to(np.asarray(self._grad_fns[v](**bindings), dtype=float),
                                shape) for v in self.wrt]
        return np.stack(cols, axis=-1)

    def grad_component(self, var, **bindings):
        return self._grad_fns[var](**bindings)

    def hess_component(self, v1, v2, **bindings):
        return self._hess_fns[(v1, v2)](**bindings)

    def grad_ast(self, var):
        return self._grads[var]

    def derivative_field(self, var):
        return ScalarField(self._grads[var], wrt=self.wrt)

    def __repr__(self):
        return f"ScalarField({self.source!r})"
