"""Tiny arithmetic expression language for trajectories and magnitudes.

Grammar (standard precedence, left associative)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | primary
    primary := number | "t" | "pi" | name "(" expr ")" | "(" expr ")"

Functions: ``sin``, ``cos``, ``eta``.  Evaluation is vectorized over ``t``.
"""

import re
from dataclasses import dataclass

import numpy as np

DIV_EPS = 1e-12


class ExprError(ValueError):
    """Syntax or evaluation error; ``offset`` is the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} at byte {offset}"
        super().__init__(message)
        self.offset = offset


def eta(s):
    """C1 ramp: 0 for s<0, s - (6 sin 2πs + sin³ 2πs)/(12π) on [0,1), 1 for s>=1."""
    s = np.asarray(s, dtype=float)
    a = np.sin(2.0 * np.pi * s)
    mid = s - (6.0 * a + a**3) / (12.0 * np.pi)
    return np.where(s < 0.0, 0.0, np.where(s < 1.0, mid, 1.0))


def eta_prime(s):
    """Derivative of :func:`eta`."""
    s = np.asarray(s, dtype=float)
    a = 2.0 * np.pi * s
    mid = 1.0 - np.cos(a) - 0.5 * np.sin(a) ** 2 * np.cos(a)
    return np.where((s < 0.0) | (s >= 1.0), 0.0, mid)


FUNCTIONS = {"sin": np.sin, "cos": np.cos, "eta": eta}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    arg: object


_TOKEN = re.compile(
    rb"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/(),]))"
)


def _tokenize(data):
    pos, out = 0, []
    while pos < len(data):
        if data[pos:].strip() == b"":
            break
        m = _TOKEN.match(data, pos)
        if m is None:
            start = pos + len(data[pos:]) - len(data[pos:].lstrip())
            raise ExprError(f"unexpected character {data[start:start + 1]!r}", start)
        kind = m.lastgroup
        out.append((kind, m.group(kind).decode("utf-8"), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(data)))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text.encode("utf-8"))
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            found = tok[1] or "end of input"
            raise ExprError(f"expected {value!r}, found {found!r}", tok[2])
        self.i += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.primary()

    def primary(self):
        kind, value, offset = self.take()
        if kind == "num":
            return Num(float(value))
        if kind == "name":
            if value == "t":
                return Var()
            if value == "pi":
                return Pi()
            if value not in FUNCTIONS:
                raise ExprError(f"unknown identifier {value!r}", offset)
            self.take("(")
            arg = self.expr()
            if self.peek()[1] == ",":
                raise ExprError(f"function {value!r} takes exactly 1 argument", self.peek()[2])
            self.take(")")
            return Call(value, arg)
        if kind == "op" and value == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ExprError(f"unexpected {value or 'end of input'!r}", offset)


def parse_expr(text):
    """Parse ``text`` into an expression tree.

    Examples
    --------
    >>> float(evaluate(parse_expr("0.8*cos(0.4*t)-0.2"), 0.0))
    0.6000000000000001
    """
    p = _Parser(text)
    node = p.expr()
    kind, value, offset = p.peek()
    if kind != "end":
        raise ExprError(f"unexpected {value!r}", offset)
    return node


def evaluate(node, t):
    """Evaluate the tree at scalar or array ``t``."""
    t = np.asarray(t, dtype=float)
    return _eval(node, t)


def _eval(node, t):
    if isinstance(node, Num):
        return np.full_like(t, node.value)
    if isinstance(node, Var):
        return t.copy()
    if isinstance(node, Pi):
        return np.full_like(t, np.pi)
    if isinstance(node, Neg):
        return -_eval(node.operand, t)
    if isinstance(node, Call):
        return FUNCTIONS[node.name](_eval(node.arg, t))
    a, b = _eval(node.left, t), _eval(node.right, t)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if np.any(np.abs(b) < DIV_EPS):
        raise ExprError("division by near-zero value")
    return a / b


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_text(node):
    """Canonical text; ``parse_expr(to_text(e)) == e``."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Call):
        return f"{node.name}({to_text(node.arg)})"
    if isinstance(node, Neg):
        inner = to_text(node.operand)
        if isinstance(node.operand, BinOp):
            inner = f"({inner})"
        return "-" + inner
    prec = _PREC[node.op]
    left, right = to_text(node.left), to_text(node.right)
    if isinstance(node.left, BinOp) and _PREC[node.left.op] < prec:
        left = f"({left})"
    if isinstance(node.right, BinOp) and _PREC[node.right.op] <= prec:
        right = f"({right})"
    return f"{left}{node.op}{right}"


# Postfix bytecode used by the compiled free-field kernel.
OP_CONST, OP_T, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG, OP_SIN, OP_COS, OP_ETA = range(10)
MAX_STACK = 64
_BINARY = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}
_UNARY = {"sin": OP_SIN, "cos": OP_COS, "eta": OP_ETA}


def compile_program(node):
    """Flatten a tree into postfix ``(codes, consts)`` arrays.

    ``consts[i]`` is only meaningful where ``codes[i] == OP_CONST``.
    """
    codes, consts = [], []
    depth = _emit(node, codes, consts, 0)
    if depth > MAX_STACK:
        raise ExprError(f"expression too deep for the compiled evaluator ({depth} > {MAX_STACK})")
    return np.array(codes, dtype=np.int64), np.array(consts, dtype=float)


def _emit(node, codes, consts, depth):
    if isinstance(node, (Num, Pi)):
        codes.append(OP_CONST)
        consts.append(node.value if isinstance(node, Num) else np.pi)
        return depth + 1
    if isinstance(node, Var):
        codes.append(OP_T)
        consts.append(0.0)
        return depth + 1
    if isinstance(node, Neg):
        d = _emit(node.operand, codes, consts, depth)
        codes.append(OP_NEG)
        consts.append(0.0)
        return d
    if isinstance(node, Call):
        d = _emit(node.arg, codes, consts, depth)
        codes.append(_UNARY[node.name])
        consts.append(0.0)
        return d
    d1 = _emit(node.left, codes, consts, depth)
    d2 = _emit(node.right, codes, consts, depth + 1)
    codes.append(_BINARY[node.op])
    consts.append(0.0)
    return max(d1, d2)


def run_program(codes, consts, t):
    """Vectorized interpreter for a postfix program (reference semantics)."""
    t = np.asarray(t, dtype=float)
    stack = []
    for op, k in zip(codes, consts):
        if op == OP_CONST:
            stack.append(np.full_like(t, k))
        elif op == OP_T:
            stack.append(t)
        elif op == OP_NEG:
            stack.append(-stack.pop())
        elif op == OP_SIN:
            stack.append(np.sin(stack.pop()))
        elif op == OP_COS:
            stack.append(np.cos(stack.pop()))
        elif op == OP_ETA:
            stack.append(eta(stack.pop()))
        else:
            b = stack.pop()
            a = stack.pop()
            if op == OP_ADD:
                stack.append(a + b)
            elif op == OP_SUB:
                stack.append(a - b)
            elif op == OP_MUL:
                stack.append(a * b)
            else:
                if np.any(np.abs(b) < DIV_EPS):
                    raise ExprError("division by near-zero value")
                stack.append(a / b)
    return stack[-1]


def run_program_dual(codes, consts, t):
    """Evaluate a postfix program and its exact ``d/dt`` (forward-mode dual numbers)."""
    t = np.asarray(t, dtype=float)
    stack = []
    for op, k in zip(codes, consts):
        if op == OP_CONST:
            stack.append((np.full_like(t, k), np.zeros_like(t)))
        elif op == OP_T:
            stack.append((t, np.ones_like(t)))
        elif op == OP_NEG:
            v, dv = stack.pop()
            stack.append((-v, -dv))
        elif op == OP_SIN:
            v, dv = stack.pop()
            stack.append((np.sin(v), np.cos(v) * dv))
        elif op == OP_COS:
            v, dv = stack.pop()
            stack.append((np.cos(v), -np.sin(v) * dv))
        elif op == OP_ETA:
            v, dv = stack.pop()
            stack.append((eta(v), eta_prime(v) * dv))
        else:
            b, db = stack.pop()
            a, da = stack.pop()
            if op == OP_ADD:
                stack.append((a + b, da + db))
            elif op == OP_SUB:
                stack.append((a - b, da - db))
            elif op == OP_MUL:
                stack.append((a * b, da * b + a * db))
            else:
                if np.any(np.abs(b) < DIV_EPS):
                    raise ExprError("division by near-zero value")
                stack.append((a / b, (da * b - a * db) / (b * b)))
    return stack[-1]
