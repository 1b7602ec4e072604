"""A small expression language for vector fields F and delays tau.

Grammar (EBNF)::

    expr   = term , { ("+" | "-") , term } ;
    term   = unary , { ("*" | "/") , unary } ;
    unary  = ("-" | "+") , unary | power ;
    power  = atom , [ "^" , unary ] ;
    atom   = number | "pi" | var | param | call | "(" , expr , ")" ;
    call   = func , "(" , expr , { "," , expr } , ")" ;
    func   = "sin" | "cos" | "exp" | "tanh" | "abs_smooth" ;
    var    = "th" , int                   (* driving angle 2*pi*theta_i *)
           | "y1_" , int | "y2_" , int    (* current / delayed state *)
           | "x0_" , int                  (* segment value at s = 0 *)
           | "xm_" , int , "@" , lag      (* segment value at fixed s = lag *)
           | "s" ;                        (* only in initial-segment specs *)
    lag    = [ "-" ] , number ;

Indices are 1-based. ``th`` variables must sit inside a ``sin`` or ``cos``
so the expression is a continuous function on the torus. ``abs_smooth(v,
eps)`` is ``sqrt(v^2 + eps^2)``. Unary minus binds tighter than ``*`` and
looser than ``^``; a minus directly in front of a literal folds into the
literal.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (ExprSyntaxError, GuardedDivisionError, MalformedInputError,
                     UnboundVariableError)

__all__ = [
    "Expr", "Num", "Var", "Param", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Call",
    "parse", "to_string", "diff", "eval_expr", "simplify", "variables",
    "validate", "compile_scalar", "ConstantDelay", "DiscreteDelay", "DEFAULT_GUARD",
]

DEFAULT_GUARD = 1e-12
TWO_PI = 2.0 * math.pi
FUNCS = {"sin": 1, "cos": 1, "exp": 1, "tanh": 1, "abs_smooth": 2}


class Expr:
    """Base class of AST nodes (all nodes are frozen dataclasses)."""

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    kind: str            # th | y1 | y2 | x0 | xm | s
    index: int = 0       # 1-based; 0 for s
    lag: float | None = None


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr
    guard: float = field(default=DEFAULT_GUARD, compare=False)


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exp: Expr


@dataclass(frozen=True)
class Call(Expr):
    name: str
    args: tuple


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),@])
""", re.VERBOSE)

_VAR = re.compile(r"^(?:th(\d+)|(y1|y2|x0|xm)_(\d+))$")


def _tokenize(src):
    pos, out = 0, []
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos + 1)
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    out.append(("eof", "", len(src) + 1))
    return out


class _Parser:
    def __init__(self, src, params, allow_s):
        self.toks = _tokenize(src)
        self.i = 0
        self.params = None if params is None else set(params)
        self.allow_s = allow_s

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        kind, val, col = self.take()
        if val != text:
            what = "end of input" if kind == "eof" else repr(val)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", col)

    def parse(self):
        e = self.expr()
        kind, val, col = self.peek()
        if kind != "eof":
            raise ExprSyntaxError(f"unexpected {val!r}", col)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            literal = self.peek()[0] == "num"
            arg = self.unary()
            if literal and isinstance(arg, Num):
                return Num(-arg.value)
            return Neg(arg)
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Pow(base, self.unary())
        return base

    def atom(self):
        kind, val, col = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            if self.peek()[1] == "(":
                return self.call(val, col)
            if val in FUNCS:
                raise ExprSyntaxError(f"function {val!r} needs arguments", col)
            if val == "pi":
                return Num(math.pi)
            if val == "s":
                if not self.allow_s:
                    raise ExprSyntaxError("unknown identifier 's'", col)
                return Var("s")
            m = _VAR.match(val)
            if m:
                if m.group(1) is not None:
                    idx = int(m.group(1))
                    kind_ = "th"
                else:
                    kind_, idx = m.group(2), int(m.group(3))
                if idx < 1:
                    raise ExprSyntaxError(f"variable index must be >= 1 in {val!r}", col)
                if kind_ == "xm":
                    return Var("xm", idx, self.lag())
                return Var(kind_, idx)
            if self.params is not None and val not in self.params:
                raise ExprSyntaxError(f"unknown identifier {val!r}", col)
            return Param(val)
        what = "end of input" if kind == "eof" else repr(val)
        raise ExprSyntaxError(f"unexpected {what}", col)

    def lag(self):
        kind, val, col = self.take()
        if val != "@":
            raise ExprSyntaxError("xm variables need a lag, e.g. xm_1@-0.5", col)
        sign = 1.0
        if self.peek()[1] == "-":
            self.take()
            sign = -1.0
        kind, val, col = self.take()
        if kind != "num":
            raise ExprSyntaxError("lag must be a numeric literal", col)
        return sign * float(val)

    def call(self, name, col):
        if name not in FUNCS:
            raise ExprSyntaxError(f"unknown identifier {name!r}", col)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != FUNCS[name]:
            raise ExprSyntaxError(
                f"{name} takes {FUNCS[name]} argument(s), got {len(args)}", col)
        return Call(name, tuple(args))


def parse(src: str, params=None, allow_s: bool = False) -> Expr:
    """Parse DSL source into an AST.

    If ``params`` is given, bare identifiers outside it are rejected;
    otherwise they become :class:`Param` nodes bound at evaluation time.
    """
    return _Parser(src, params, allow_s).parse()


# ---------------------------------------------------------------------------
# printer

def _fmt_num(v):
    if not math.isfinite(v):
        raise MalformedInputError(f"non-finite literal {v}")
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _prec(e):
    if isinstance(e, (Add, Sub)):
        return 1
    if isinstance(e, (Mul, Div)):
        return 2
    if isinstance(e, Neg) or (isinstance(e, Num) and (e.value < 0 or math.copysign(1, e.value) < 0)):
        return 3
    if isinstance(e, Pow):
        return 4
    return 5


def _wrap(e, cond):
    s = to_string(e)
    return f"({s})" if cond else s


def to_string(e: Expr) -> str:
    """Canonical printer; ``parse(to_string(e)) == e`` for parsed ASTs."""
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        if e.kind == "s":
            return "s"
        if e.kind == "th":
            return f"th{e.index}"
        if e.kind == "xm":
            return f"xm_{e.index}@{_fmt_num(e.lag)}"
        return f"{e.kind}_{e.index}"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _prec(e.arg) < 3 or isinstance(e.arg, Num))
    if isinstance(e, (Add, Sub)):
        op = " + " if isinstance(e, Add) else " - "
        return _wrap(e.left, _prec(e.left) < 1) + op + _wrap(e.right, _prec(e.right) <= 1)
    if isinstance(e, (Mul, Div)):
        op = "*" if isinstance(e, Mul) else "/"
        return _wrap(e.left, _prec(e.left) < 2) + op + _wrap(e.right, _prec(e.right) <= 2)
    if isinstance(e, Pow):
        return _wrap(e.base, _prec(e.base) <= 4) + "^" + _wrap(e.exp, _prec(e.exp) < 3)
    if isinstance(e, Call):
        return f"{e.name}(" + ", ".join(to_string(a) for a in e.args) + ")"
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# simplification (constant folding only)

def _is(e, v):
    return isinstance(e, Num) and e.value == v


def add(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return Add(a, b)


def sub(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    return Sub(a, b)


def mul(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if _is(a, 0) or _is(b, 0):
        return Num(0.0)
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if _is(a, -1):
        return neg(b)
    if _is(b, -1):
        return neg(a)
    return Mul(a, b)


def div(a, b, guard=DEFAULT_GUARD):
    if _is(a, 0):
        return Num(0.0)
    if _is(b, 1):
        return a
    if isinstance(a, Num) and isinstance(b, Num) and abs(b.value) >= guard:
        return Num(a.value / b.value)
    return Div(a, b, guard)


def pow_(a, b):
    if _is(b, 1):
        return a
    if _is(b, 0):
        return Num(1.0)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value ** b.value)
    return Pow(a, b)


def neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def simplify(e: Expr) -> Expr:
    if isinstance(e, (Num, Var, Param)):
        return e
    if isinstance(e, Neg):
        return neg(simplify(e.arg))
    if isinstance(e, Add):
        return add(simplify(e.left), simplify(e.right))
    if isinstance(e, Sub):
        return sub(simplify(e.left), simplify(e.right))
    if isinstance(e, Mul):
        return mul(simplify(e.left), simplify(e.right))
    if isinstance(e, Div):
        return div(simplify(e.left), simplify(e.right), e.guard)
    if isinstance(e, Pow):
        return pow_(simplify(e.base), simplify(e.exp))
    if isinstance(e, Call):
        return Call(e.name, tuple(simplify(a) for a in e.args))
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# differentiation

def _as_var(wrt):
    if isinstance(wrt, Var):
        return wrt
    if isinstance(wrt, str):
        v = parse(wrt, allow_s=True)
        if not isinstance(v, Var):
            raise MalformedInputError(f"{wrt!r} is not a variable")
        return v
    kind, idx, *rest = wrt
    return Var(kind, int(idx), rest[0] if rest else None)


def _same_var(a: Var, b: Var):
    if a.kind != b.kind or a.index != b.index:
        return False
    if a.kind == "xm":
        return abs(a.lag - b.lag) <= 1e-14
    return True


def diff(e: Expr, wrt) -> Expr:
    """Symbolic partial derivative with respect to one variable.

    ``wrt`` may be a :class:`Var`, a source string such as ``"y1_1"`` or
    ``"xm_1@-0.5"``, or a tuple ``(kind, index[, lag])``. Differentiating
    with respect to a variable that does not occur gives ``Num(0)``.
    """
    return _d(e, _as_var(wrt))


def _d(e, v):
    if isinstance(e, (Num, Param)):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0) if _same_var(e, v) else Num(0.0)
    if isinstance(e, Neg):
        return neg(_d(e.arg, v))
    if isinstance(e, Add):
        return add(_d(e.left, v), _d(e.right, v))
    if isinstance(e, Sub):
        return sub(_d(e.left, v), _d(e.right, v))
    if isinstance(e, Mul):
        return add(mul(_d(e.left, v), e.right), mul(e.left, _d(e.right, v)))
    if isinstance(e, Div):
        da, db = _d(e.left, v), _d(e.right, v)
        if _is(db, 0):
            return div(da, e.right, e.guard)
        return div(sub(mul(da, e.right), mul(e.left, db)), pow_(e.right, Num(2.0)), e.guard ** 2)
    if isinstance(e, Pow):
        if not _is(_d(e.exp, v), 0):
            raise MalformedInputError("cannot differentiate a power with variable exponent")
        db = _d(e.base, v)
        if _is(db, 0):
            return Num(0.0)
        return mul(mul(e.exp, pow_(e.base, sub(e.exp, Num(1.0)))), db)
    if isinstance(e, Call):
        a = e.args[0]
        da = _d(a, v)
        if e.name == "abs_smooth":
            eps = e.args[1]
            de = _d(eps, v)
            num = add(mul(a, da), mul(eps, de))
            return div(num, e, 0.0) if not _is(num, 0) else Num(0.0)
        if _is(da, 0):
            return Num(0.0)
        if e.name == "sin":
            outer = Call("cos", (a,))
        elif e.name == "cos":
            outer = neg(Call("sin", (a,)))
        elif e.name == "exp":
            outer = e
        elif e.name == "tanh":
            outer = sub(Num(1.0), pow_(e, Num(2.0)))
        else:
            raise MalformedInputError(f"no derivative rule for {e.name}")
        return mul(outer, da)
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# inspection / validation

def variables(e: Expr) -> set:
    """All Var and Param leaves."""
    out = set()
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, (Var, Param)):
            out.add(x)
        elif isinstance(x, Neg):
            stack.append(x.arg)
        elif isinstance(x, (Add, Sub, Mul, Div)):
            stack += [x.left, x.right]
        elif isinstance(x, Pow):
            stack += [x.base, x.exp]
        elif isinstance(x, Call):
            stack += list(x.args)
    return out


_ROLE_KINDS = {
    "F": {"th", "y1", "y2"},
    "tau": {"th", "x0", "xm"},
    "segment": {"s"},
}


def _check_th_wrapped(e, inside):
    if isinstance(e, Var) and e.kind == "th" and not inside:
        raise MalformedInputError(
            f"driving variable th{e.index} must appear inside sin() or cos()")
    if isinstance(e, Call):
        flag = inside or e.name in ("sin", "cos")
        for a in e.args:
            _check_th_wrapped(a, flag)
    elif isinstance(e, Neg):
        _check_th_wrapped(e.arg, inside)
    elif isinstance(e, (Add, Sub, Mul, Div)):
        _check_th_wrapped(e.left, inside)
        _check_th_wrapped(e.right, inside)
    elif isinstance(e, Pow):
        _check_th_wrapped(e.base, inside)
        _check_th_wrapped(e.exp, inside)


def validate(e: Expr, role: str, dim: int, phase_dim: int = 1, r: float | None = None,
             params=()):
    """Check variable classes, indices and lag ranges for a model role."""
    allowed = _ROLE_KINDS[role]
    for v in variables(e):
        if isinstance(v, Param):
            if v.name not in params:
                raise MalformedInputError(f"unbound parameter {v.name!r}")
            continue
        if v.kind not in allowed:
            raise MalformedInputError(
                f"variable {to_string(v)} not allowed in a {role} expression")
        limit = phase_dim if v.kind == "th" else dim
        if v.kind != "s" and not 1 <= v.index <= limit:
            raise MalformedInputError(f"index of {to_string(v)} exceeds dimension {limit}")
        if v.kind == "xm" and r is not None and not (-r - 1e-12 <= v.lag <= 1e-12):
            raise MalformedInputError(f"lag of {to_string(v)} outside [-r, 0]")
    _check_th_wrapped(e, False)


# ---------------------------------------------------------------------------
# evaluation

def _lookup(env, key, idx=None):
    try:
        val = env[key]
    except KeyError:
        raise UnboundVariableError(f"variable {key!r} is not bound") from None
    if idx is None:
        return float(val)
    try:
        return float(val[idx - 1])
    except (IndexError, TypeError):
        raise UnboundVariableError(f"variable {key}[{idx}] is not bound") from None


def eval_expr(e: Expr, env: dict) -> float:
    """Tree-walking evaluation.

    ``env`` maps ``"th"``, ``"y1"``, ``"y2"``, ``"x0"`` to sequences
    (``th`` holds raw torus coordinates in [0, 1)), ``"xm"`` to a callable
    ``lag -> vector`` or a dict keyed by lag, ``"s"`` to a float, and
    parameter names to floats.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Param):
        return _lookup(env, e.name)
    if isinstance(e, Var):
        if e.kind == "s":
            return _lookup(env, "s")
        if e.kind == "th":
            return TWO_PI * _lookup(env, "th", e.index)
        if e.kind == "xm":
            src = env.get("xm")
            if src is None:
                raise UnboundVariableError(f"variable {to_string(e)} is not bound")
            vec = src(e.lag) if callable(src) else src[e.lag]
            return float(vec[e.index - 1])
        return _lookup(env, e.kind, e.index)
    if isinstance(e, Neg):
        return -eval_expr(e.arg, env)
    if isinstance(e, Add):
        return eval_expr(e.left, env) + eval_expr(e.right, env)
    if isinstance(e, Sub):
        return eval_expr(e.left, env) - eval_expr(e.right, env)
    if isinstance(e, Mul):
        return eval_expr(e.left, env) * eval_expr(e.right, env)
    if isinstance(e, Div):
        return _gdiv(eval_expr(e.left, env), eval_expr(e.right, env), e.guard)
    if isinstance(e, Pow):
        return eval_expr(e.base, env) ** eval_expr(e.exp, env)
    if isinstance(e, Call):
        args = [eval_expr(a, env) for a in e.args]
        if e.name == "abs_smooth":
            return math.sqrt(args[0] ** 2 + args[1] ** 2)
        return getattr(math, e.name)(args[0])
    raise TypeError(f"not an expression node: {e!r}")


def _gdiv(a, b, guard):
    if abs(b) < guard or b == 0.0:
        raise GuardedDivisionError(f"denominator {b!r} below guard {guard!r}")
    return a / b


# ---------------------------------------------------------------------------
# compilation to Python closures

class _Emitter:
    def __init__(self, params):
        self.params = dict(params)
        self.lags = {}

    def lag_name(self, lag):
        for k, name in self.lags.items():
            if abs(k - lag) <= 1e-14:
                return name
        name = f"_p{len(self.lags)}"
        self.lags[lag] = name
        return name

    def emit(self, e):
        if isinstance(e, Num):
            return repr(e.value)
        if isinstance(e, Param):
            if e.name not in self.params:
                raise UnboundVariableError(f"parameter {e.name!r} is not bound")
            return repr(float(self.params[e.name]))
        if isinstance(e, Var):
            if e.kind == "s":
                return "s"
            if e.kind == "th":
                return f"({TWO_PI!r}*th[{e.index - 1}])"
            if e.kind == "x0":
                return f"{self.lag_name(0.0)}[{e.index - 1}]"
            if e.kind == "xm":
                return f"{self.lag_name(e.lag)}[{e.index - 1}]"
            return f"{e.kind}[{e.index - 1}]"
        if isinstance(e, Neg):
            return f"(-{self.emit(e.arg)})"
        if isinstance(e, Add):
            return f"({self.emit(e.left)} + {self.emit(e.right)})"
        if isinstance(e, Sub):
            return f"({self.emit(e.left)} - {self.emit(e.right)})"
        if isinstance(e, Mul):
            return f"({self.emit(e.left)} * {self.emit(e.right)})"
        if isinstance(e, Div):
            return f"_gdiv({self.emit(e.left)}, {self.emit(e.right)}, {e.guard!r})"
        if isinstance(e, Pow):
            return f"({self.emit(e.base)} ** {self.emit(e.exp)})"
        if isinstance(e, Call):
            args = [self.emit(a) for a in e.args]
            if e.name == "abs_smooth":
                return f"_sqrt({args[0]}**2 + {args[1]}**2)"
            return f"_{e.name}({args[0]})"
        raise TypeError(f"not an expression node: {e!r}")


_NS = {"_sin": math.sin, "_cos": math.cos, "_exp": math.exp, "_tanh": math.tanh,
       "_sqrt": math.sqrt, "_gdiv": _gdiv}


def compile_scalar(exprs, signature: str, params=None):
    """Compile a list of expressions into one Python function.

    ``signature`` is ``"state"`` for ``f(th, y1, y2) -> ndarray``,
    ``"segment"`` for ``f(th, x) -> ndarray`` (``x`` has ``eval(s)``), or
    ``"s"`` for ``f(s) -> ndarray``. Parameters are inlined as constants.
    """
    em = _Emitter(params or {})
    bodies = [em.emit(e) for e in exprs]
    ret = "_np.array([" + ", ".join(bodies) + "])"
    if signature == "state":
        src = f"def _f(th, y1, y2):\n    return {ret}\n"
    elif signature == "segment":
        pre = "".join(f"    {name} = x.eval({lag!r})\n" for lag, name in em.lags.items())
        src = f"def _f(th, x):\n{pre}    return {ret}\n"
    elif signature == "s":
        src = f"def _f(s):\n    return {ret}\n"
    else:
        raise ValueError(f"unknown signature {signature!r}")
    ns = dict(_NS, _np=np)
    exec(compile(src, "<sdde-expr>", "exec"), ns)
    fn = ns["_f"]
    fn.source = src
    return fn


# ---------------------------------------------------------------------------
# delay forms

class ConstantDelay:
    """tau == c; its derivative with respect to the segment vanishes."""

    def __init__(self, c: float):
        self.c = float(c)

    def tau(self, th, x):
        return self.c

    def d2tau(self, th, x):
        return []

    def describe(self):
        return {"kind": "constant", "value": self.c}


class DiscreteDelay:
    """tau given by an expression in finitely many point values of the segment.

    The derivative with respect to the segment is the finite-rank functional
    ``phi -> sum_k w_k . phi(s_k)``, returned as a list of ``(s_k, w_k)``.
    """

    def __init__(self, expr, dim: int, r: float, phase_dim: int = 1, params=None):
        params = dict(params or {})
        if isinstance(expr, str):
            expr = parse(expr)
        validate(expr, "tau", dim, phase_dim, r, params)
        self.expr = expr
        self.dim = dim
        self.r = float(r)
        self.params = params
        points = {}
        for v in variables(expr):
            if isinstance(v, Var):
                lag = 0.0 if v.kind == "x0" else v.lag
                points.setdefault(lag, set()).add(v)
        self.lags = sorted(points, reverse=True)
        self._tau = compile_scalar([expr], "segment", params)
        self._partials = []
        for lag in self.lags:
            row = []
            for j in range(1, dim + 1):
                d = Num(0.0)
                for v in points[lag]:
                    if v.index == j:
                        d = add(d, diff(expr, v))
                row.append(d)
            self._partials.append(row)
        flat = [d for row in self._partials for d in row]
        self._grad = compile_scalar(flat, "segment", params) if flat else None

    def tau(self, th, x):
        return float(self._tau(th, x)[0])

    def d2tau(self, th, x):
        if self._grad is None:
            return []
        g = self._grad(th, x).reshape(len(self.lags), self.dim)
        return [(lag, g[k]) for k, lag in enumerate(self.lags)]

    def describe(self):
        return {"kind": "discrete", "expr": to_string(self.expr)}
