"""Lexer, parser, and evaluator for the transient expectation query language.

A query file contains `;`-terminated operator definitions and eval
directives, e.g.::

    obsAtStep(x, obs) =
      if (s.rval("steps") == x) then s.rval(obs)
      else # obsAtStep(x, obs) fi;

    eval parametric(E[obsAtStep(x, obs)], x, 101, 10, 600);

Recursion must be guarded by `#` (next-step application), which is what
bounds evaluation by the simulation horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

# ---------------------------------------------------------------------------
# Errors


class QueryError(Exception):
    """Base class for query language errors."""


class LexError(QueryError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class ParseError(QueryError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class EvalError(QueryError):
    pass


class HorizonExceeded(EvalError):
    pass


# ---------------------------------------------------------------------------
# Lexer

KEYWORDS = {"if", "then", "else", "fi", "eval", "parametric", "E", "s", "rval"}
PUNCT = {"=", "(", ")", ",", ";", "[", "]", "#", "."}
CMP_OPS = {"==", "!=", "<", "<=", ">", ">="}


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT NUMBER STRING KEYWORD PUNCT CMP EOF
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    line = 1
    col = 1
    n = len(source)

    def advance(k: int = 1) -> None:
        nonlocal i, line, col
        for _ in range(k):
            if i < n and source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = source[i]
        if c in " \t\r\n":
            advance()
            continue
        if source.startswith("--", i):
            while i < n and source[i] != "\n":
                advance()
            continue
        tl, tc = line, col
        if c == '"':
            j = i + 1
            while j < n and source[j] != '"':
                if source[j] == "\n":
                    raise LexError("unterminated string literal", tl, tc)
                j += 1
            if j >= n:
                raise LexError("unterminated string literal", tl, tc)
            text = source[i + 1 : j]
            advance(j - i + 1)
            tokens.append(Token("STRING", text, tl, tc))
            continue
        if c.isdigit():
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
            advance(j - i)
            tokens.append(Token("NUMBER", text, tl, tc))
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            advance(j - i)
            kind = "KEYWORD" if text in KEYWORDS else "IDENT"
            tokens.append(Token(kind, text, tl, tc))
            continue
        two = source[i : i + 2]
        if two in CMP_OPS:
            advance(2)
            tokens.append(Token("CMP", two, tl, tc))
            continue
        if c in "<>":
            advance()
            tokens.append(Token("CMP", c, tl, tc))
            continue
        if c in PUNCT:
            advance()
            tokens.append(Token("PUNCT", c, tl, tc))
            continue
        if c == "-":
            advance()
            tokens.append(Token("PUNCT", "-", tl, tc))
            continue
        raise LexError(f"illegal character {c!r}", tl, tc)
    tokens.append(Token("EOF", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Rval:
    name: "Expr"


@dataclass(frozen=True)
class Cmp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class If:
    cond: "Expr"
    then: "Expr"
    orelse: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Next:
    call: Call


Expr = Union[Num, Str, Var, Rval, Cmp, If, Call, Next]


@dataclass(frozen=True)
class Parametric:
    param: str
    lo: int
    step: int
    hi: int


@dataclass(frozen=True)
class EvalDirective:
    target: Expr
    parametric: Parametric | None


@dataclass(frozen=True)
class Definition:
    name: str
    params: tuple[str, ...]
    body: Expr


@dataclass(frozen=True)
class QueryAst:
    definitions: tuple[Definition, ...]
    directives: tuple[EvalDirective, ...]


# ---------------------------------------------------------------------------
# Parser (recursive descent)


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def error(self, expected: str) -> ParseError:
        tok = self.peek()
        got = tok.text or "end of input"
        return ParseError(f"expected {expected}, got {got!r}", tok.line, tok.col)

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            raise self.error(text if text is not None else kind)
        return self.next()

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    # -- grammar ------------------------------------------------------------

    def parse_query(self) -> QueryAst:
        definitions: list[Definition] = []
        directives: list[EvalDirective] = []
        while not self.at("EOF"):
            if self.at("KEYWORD", "eval"):
                directives.append(self.parse_directive())
            else:
                definitions.append(self.parse_definition())
        return QueryAst(tuple(definitions), tuple(directives))

    def parse_definition(self) -> Definition:
        name = self.expect("IDENT").text
        self.expect("PUNCT", "(")
        params: list[str] = []
        if not self.at("PUNCT", ")"):
            params.append(self.expect("IDENT").text)
            while self.at("PUNCT", ","):
                self.next()
                params.append(self.expect("IDENT").text)
        self.expect("PUNCT", ")")
        self.expect("PUNCT", "=")
        body = self.parse_expr()
        self.expect("PUNCT", ";")
        return Definition(name, tuple(params), body)

    def parse_directive(self) -> EvalDirective:
        self.expect("KEYWORD", "eval")
        if self.at("KEYWORD", "parametric"):
            self.next()
            self.expect("PUNCT", "(")
            target = self.parse_expectation()
            self.expect("PUNCT", ",")
            param = self.expect("IDENT").text
            self.expect("PUNCT", ",")
            lo = self.parse_int()
            self.expect("PUNCT", ",")
            step = self.parse_int()
            self.expect("PUNCT", ",")
            hi = self.parse_int()
            self.expect("PUNCT", ")")
            self.expect("PUNCT", ";")
            tok = self.tokens[self.pos - 1]
            if step < 1:
                raise ParseError(f"parametric step must be >= 1, got {step}", tok.line, tok.col)
            if lo > hi:
                raise ParseError(f"parametric range empty: lo {lo} > hi {hi}", tok.line, tok.col)
            return EvalDirective(target, Parametric(param, lo, step, hi))
        target = self.parse_expectation()
        self.expect("PUNCT", ";")
        return EvalDirective(target, None)

    def parse_int(self) -> int:
        neg = False
        if self.at("PUNCT", "-"):
            self.next()
            neg = True
        tok = self.expect("NUMBER")
        try:
            value = int(tok.text)
        except ValueError:
            raise ParseError(f"expected integer, got {tok.text!r}", tok.line, tok.col) from None
        return -value if neg else value

    def parse_expectation(self) -> Expr:
        self.expect("KEYWORD", "E")
        self.expect("PUNCT", "[")
        expr = self.parse_expr()
        self.expect("PUNCT", "]")
        return expr

    def parse_expr(self) -> Expr:
        if self.at("KEYWORD", "if"):
            self.next()
            cond = self.parse_expr()
            self.expect("KEYWORD", "then")
            then = self.parse_expr()
            self.expect("KEYWORD", "else")
            orelse = self.parse_expr()
            self.expect("KEYWORD", "fi")
            return If(cond, then, orelse)
        left = self.parse_atom()
        if self.at("CMP"):
            op = self.next().text
            right = self.parse_atom()
            return Cmp(op, left, right)
        return left

    def parse_atom(self) -> Expr:
        if self.at("PUNCT", "("):
            self.next()
            expr = self.parse_expr()
            self.expect("PUNCT", ")")
            return expr
        if self.at("PUNCT", "#"):
            self.next()
            call = self.parse_atom()
            if not isinstance(call, Call):
                tok = self.peek()
                raise ParseError("'#' must wrap an operator call", tok.line, tok.col)
            return Next(call)
        if self.at("PUNCT", "-"):
            self.next()
            tok = self.expect("NUMBER")
            return Num(-float(tok.text))
        if self.at("NUMBER"):
            return Num(float(self.next().text))
        if self.at("STRING"):
            return Str(self.next().text)
        if self.at("KEYWORD", "s") or self.at("KEYWORD", "rval"):
            # `s.rval(e)` receiver form; bare `rval(e)` accepted as alias
            if self.at("KEYWORD", "s"):
                self.next()
                self.expect("PUNCT", ".")
            self.expect("KEYWORD", "rval")
            self.expect("PUNCT", "(")
            name = self.parse_expr()
            self.expect("PUNCT", ")")
            return Rval(name)
        if self.at("IDENT"):
            name = self.next().text
            if self.at("PUNCT", "("):
                self.next()
                args: list[Expr] = []
                if not self.at("PUNCT", ")"):
                    args.append(self.parse_expr())
                    while self.at("PUNCT", ","):
                        self.next()
                        args.append(self.parse_expr())
                self.expect("PUNCT", ")")
                return Call(name, tuple(args))
            return Var(name)
        raise self.error("expression")


def parse(source: str) -> QueryAst:
    ast = _Parser(tokenize(source)).parse_query()
    _validate(ast)
    return ast


# ---------------------------------------------------------------------------
# Static validation


def _walk(expr: Expr):
    yield expr
    if isinstance(expr, Rval):
        yield from _walk(expr.name)
    elif isinstance(expr, Cmp):
        yield from _walk(expr.left)
        yield from _walk(expr.right)
    elif isinstance(expr, If):
        yield from _walk(expr.cond)
        yield from _walk(expr.then)
        yield from _walk(expr.orelse)
    elif isinstance(expr, Call):
        for a in expr.args:
            yield from _walk(a)
    elif isinstance(expr, Next):
        yield from _walk(expr.call)


def _validate(ast: QueryAst) -> None:
    defs = {}
    for d in ast.definitions:
        if d.name in defs:
            raise QueryError(f"duplicate definition of operator {d.name!r}")
        defs[d.name] = d

    def check_calls(expr: Expr, context: str) -> None:
        for node in _walk(expr):
            if isinstance(node, (Call, Next)):
                call = node.call if isinstance(node, Next) else node
                target = defs.get(call.name)
                if target is None:
                    raise QueryError(f"unknown operator {call.name!r} in {context}")
                if len(call.args) != len(target.params):
                    raise QueryError(
                        f"arity mismatch in {context}: {call.name!r} takes "
                        f"{len(target.params)} arguments, got {len(call.args)}"
                    )

    for d in ast.definitions:
        check_calls(d.body, f"definition of {d.name!r}")
        referenced = {n.name for n in _walk(d.body) if isinstance(n, Var)}
        formals = set(d.params)
        unknown = referenced - formals
        if unknown:
            raise QueryError(
                f"definition of {d.name!r} references unknown parameter(s) "
                f"{sorted(unknown)}"
            )
        unused = formals - referenced
        if unused:
            raise QueryError(
                f"definition of {d.name!r} does not use parameter(s) {sorted(unused)}"
            )
    for i, directive in enumerate(ast.directives):
        check_calls(directive.target, f"directive #{i + 1}")

    # Guarded recursion: every cycle in the call graph must cross a `#`.
    # Unguarded edges are calls not wrapped by Next; a cycle over only
    # unguarded edges would recurse within a single step.
    unguarded: dict[str, set[str]] = {d.name: set() for d in ast.definitions}
    for d in ast.definitions:
        stack = [(d.body, False)]
        while stack:
            expr, guarded = stack.pop()
            if isinstance(expr, Next):
                stack.append((expr.call, True))
            elif isinstance(expr, Call):
                if not guarded:
                    unguarded[d.name].add(expr.name)
                for a in expr.args:
                    stack.append((a, False))
            elif isinstance(expr, Rval):
                stack.append((expr.name, False))
            elif isinstance(expr, Cmp):
                stack.append((expr.left, False))
                stack.append((expr.right, False))
            elif isinstance(expr, If):
                stack.append((expr.cond, False))
                stack.append((expr.then, False))
                stack.append((expr.orelse, False))
    state: dict[str, int] = {}  # 0 visiting, 1 done

    def visit(name: str) -> None:
        state[name] = 0
        for callee in unguarded.get(name, ()):
            if state.get(callee) == 0:
                raise QueryError(f"unguarded recursion through operator {callee!r}")
            if callee not in state:
                visit(callee)
        state[name] = 1

    for name in unguarded:
        if name not in state:
            visit(name)


# ---------------------------------------------------------------------------
# Pretty printer


def pretty(ast: QueryAst) -> str:
    parts = [f"{_pp_def(d)}" for d in ast.definitions]
    parts += [_pp_directive(d) for d in ast.directives]
    return "\n".join(parts) + "\n"


def _pp_def(d: Definition) -> str:
    return f"{d.name}({', '.join(d.params)}) = {_pp(d.body)};"


def _pp_directive(d: EvalDirective) -> str:
    if d.parametric is None:
        return f"eval E[{_pp(d.target)}];"
    p = d.parametric
    return f"eval parametric(E[{_pp(d.target)}], {p.param}, {p.lo}, {p.step}, {p.hi});"


def _pp(expr: Expr) -> str:
    if isinstance(expr, Num):
        v = expr.value
        return str(int(v)) if v == int(v) and math.isfinite(v) else repr(v)
    if isinstance(expr, Str):
        return f'"{expr.value}"'
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Rval):
        return f"s.rval({_pp(expr.name)})"
    if isinstance(expr, Cmp):
        return f"({_pp(expr.left)} {expr.op} {_pp(expr.right)})"
    if isinstance(expr, If):
        return f"if {_pp(expr.cond)} then {_pp(expr.then)} else {_pp(expr.orelse)} fi"
    if isinstance(expr, Next):
        return f"# {_pp(expr.call)}"
    if isinstance(expr, Call):
        return f"{expr.name}({', '.join(_pp(a) for a in expr.args)})"
    raise TypeError(f"unknown expression node {expr!r}")


# ---------------------------------------------------------------------------
# Observation plans


@dataclass(frozen=True)
class ObservationPlan:
    """Ordered observation schedule one run must report.

    `generic` marks the fallback for queries not matching the
    step-triggered observation pattern; such plans carry one synthetic
    point per directive at the configured horizon and are evaluated by
    small-step expansion instead of direct observation.
    """

    points: tuple[tuple[int, str], ...]
    max_step: int
    generic: bool = False

    def __post_init__(self) -> None:
        if not self.points:
            raise ValueError("observation plan must be non-empty")
        if self.max_step != max(s for s, _ in self.points):
            raise ValueError("max_step must equal the largest step index")
        by_obs: dict[str, int] = {}
        if not self.generic:
            for step, obs in self.points:
                if step < 1:
                    raise ValueError(f"step indices must be positive, got {step}")
                if obs in by_obs and step <= by_obs[obs]:
                    raise ValueError("plan points must be strictly ascending per observable")
                by_obs[obs] = step


def _match_obs_at_step(
    defn: Definition, directive: EvalDirective
) -> tuple[int, Expr] | None:
    """Match the step-triggered observation shape.

    Body must be `if rval("steps") == <p> then rval(<obs>) else # self(...) fi`
    (comparison order free). Returns (index of the step parameter in the
    definition's formals, obs argument expression at directive level).
    """
    body = defn.body
    if not isinstance(body, If):
        return None
    cond, then, orelse = body.cond, body.then, body.orelse
    if not (isinstance(cond, Cmp) and cond.op == "=="):
        return None
    sides = [cond.left, cond.right]
    steps_side = next(
        (e for e in sides if isinstance(e, Rval) and e.name == Str("steps")), None
    )
    param_side = next((e for e in sides if isinstance(e, Var)), None)
    if steps_side is None or param_side is None:
        return None
    if param_side.name not in defn.params:
        return None
    if not isinstance(then, Rval):
        return None
    if not (isinstance(orelse, Next) and orelse.call.name == defn.name):
        return None
    if orelse.call.args != tuple(Var(p) for p in defn.params):
        return None
    step_index = defn.params.index(param_side.name)
    # Resolve the observable argument through the directive call
    target = directive.target
    if not isinstance(target, Call) or target.name != defn.name:
        return None
    if isinstance(then.name, Str):
        return step_index, then.name
    if isinstance(then.name, Var) and then.name.name in defn.params:
        obs_index = defn.params.index(then.name.name)
        return step_index, target.args[obs_index]
    return None


def expand_parametric(
    ast: QueryAst,
    obs_binding: dict[str, str] | None = None,
    horizon: int | None = None,
) -> ObservationPlan:
    """Turn parametric directives into an observation plan.

    Directives of the step-triggered shape become one plan point per
    grid value; anything else falls back to a generic plan covering the
    configured horizon.
    """
    if not ast.directives:
        raise QueryError("query has no eval directives")
    obs_binding = obs_binding or {}
    defs = {d.name: d for d in ast.definitions}
    points: list[tuple[int, str]] = []
    for i, directive in enumerate(ast.directives):
        p = directive.parametric
        target = directive.target
        match = None
        if p is not None and isinstance(target, Call) and target.name in defs:
            match = _match_obs_at_step(defs[target.name], directive)
        if match is None:
            return _generic_plan(ast, horizon)
        step_index, obs_expr = match
        step_arg = target.args[step_index]
        if not (isinstance(step_arg, Var) and step_arg.name == p.param):
            return _generic_plan(ast, horizon)
        if isinstance(obs_expr, Str):
            obs_name = obs_expr.value
        elif isinstance(obs_expr, Var):
            if obs_expr.name not in obs_binding:
                raise QueryError(
                    f"unresolved observable name {obs_expr.name!r} in directive #{i + 1}"
                )
            obs_name = obs_binding[obs_expr.name]
        else:
            return _generic_plan(ast, horizon)
        grid = list(range(p.lo, p.hi + 1, p.step))
        if not grid:
            raise QueryError(f"empty parametric grid in directive #{i + 1}")
        points.extend((v, obs_name) for v in grid)
    points.sort(key=lambda sp: (sp[0], sp[1]))
    return ObservationPlan(tuple(points), max(s for s, _ in points))


def _generic_plan(ast: QueryAst, horizon: int | None) -> ObservationPlan:
    if horizon is None:
        raise QueryError(
            "query does not match the step-triggered pattern and no horizon "
            "was configured for generic evaluation"
        )
    points = tuple((horizon, f"<eval{i + 1}>") for i in range(len(ast.directives)))
    return ObservationPlan(points, horizon, generic=True)


# ---------------------------------------------------------------------------
# Run evaluation


class _NextState(Exception):
    def __init__(self, call: Call, args: tuple):
        self.call = call
        self.args = args


def evaluate_run(ast: QueryAst, plan: ObservationPlan, sim, seed: int) -> list[float]:
    """Drive one simulator run and extract the plan's sample vector.

    Issues exactly one reset; the step counter is 1 right after reset
    (reset performs the first step) and increments once per advance.
    """
    sim.reset(seed)
    if plan.generic:
        return [_evaluate_generic(ast, d, sim, plan.max_step) for d in ast.directives]

    if plan.max_step > _sim_horizon(sim, plan.max_step):
        raise HorizonExceeded(
            f"plan requires step {plan.max_step} beyond the simulator horizon"
        )
    by_step: dict[int, list[int]] = {}
    for idx, (step, _) in enumerate(plan.points):
        by_step.setdefault(step, []).append(idx)
    samples: list[float] = [math.nan] * len(plan.points)
    for step in range(1, plan.max_step + 1):
        if step > 1:
            sim.advance()
        for idx in by_step.get(step, ()):
            _, obs = plan.points[idx]
            samples[idx] = float(step) if obs == "steps" else sim.observe(obs)
    return samples


def _sim_horizon(sim, default: int) -> int:
    return getattr(sim, "horizon", None) or default


def _evaluate_generic(ast: QueryAst, directive: EvalDirective, sim, horizon: int) -> float:
    defs = {d.name: d for d in ast.definitions}
    expr: Expr = directive.target
    env: dict[str, object] = {}
    step = 1
    while True:
        try:
            value = _eval(expr, env, defs, sim, step)
        except _NextState as pending:
            if step >= horizon:
                raise HorizonExceeded(
                    f"query did not resolve within horizon {horizon}"
                ) from None
            sim.advance()
            step += 1
            target = defs[pending.call.name]
            expr = target.body
            env = dict(zip(target.params, pending.args))
            continue
        if isinstance(value, bool):
            return 1.0 if value else 0.0
        if isinstance(value, float):
            return value
        raise EvalError(f"query evaluated to non-numeric value {value!r}")


def _eval(expr: Expr, env: dict, defs: dict, sim, step: int):
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Str):
        return expr.value
    if isinstance(expr, Var):
        if expr.name not in env:
            raise EvalError(f"unbound identifier {expr.name!r}")
        return env[expr.name]
    if isinstance(expr, Rval):
        name = _eval(expr.name, env, defs, sim, step)
        if not isinstance(name, str):
            raise EvalError(f"rval argument must be an observable name, got {name!r}")
        return float(step) if name == "steps" else sim.observe(name)
    if isinstance(expr, Cmp):
        left = _eval(expr.left, env, defs, sim, step)
        right = _eval(expr.right, env, defs, sim, step)
        ops: dict[str, Callable] = {
            "==": lambda a, b: a == b,
            "!=": lambda a, b: a != b,
            "<": lambda a, b: a < b,
            "<=": lambda a, b: a <= b,
            ">": lambda a, b: a > b,
            ">=": lambda a, b: a >= b,
        }
        return ops[expr.op](left, right)
    if isinstance(expr, If):
        cond = _eval(expr.cond, env, defs, sim, step)
        return _eval(expr.then if cond else expr.orelse, env, defs, sim, step)
    if isinstance(expr, Next):
        args = tuple(_eval(a, env, defs, sim, step) for a in expr.call.args)
        raise _NextState(expr.call, args)
    if isinstance(expr, Call):
        target = defs[expr.name]
        args = tuple(_eval(a, env, defs, sim, step) for a in expr.args)
        return _eval(target.body, dict(zip(target.params, args)), defs, sim, step)
    raise TypeError(f"unknown expression node {expr!r}")
