# -*- coding: utf-8 -*-
"""
势函数表达式模块
解析并求值 d 元实函数（势函数 V、密度权重、测试函数 f），
并提供基于中心差分的梯度与海森矩阵计算

语法见 docs/grammar.md；表达式解析后不可变，可在多线程中并发求值
"""

import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, FrozenSet, Iterator, List, Optional, Tuple

import numpy as np
from loguru import logger

from config import DIFF_CONFIG

# 递归下降的嵌套上限，超过后返回诊断而不是耗尽解释器栈
MAX_DEPTH = 100

CONSTANTS = {'pi': np.pi, 'e': np.e}
UNARY_FUNCTIONS = ('exp', 'log', 'sqrt', 'abs', 'neg')
NARY_FUNCTIONS = ('min', 'max')
ATOM_START = frozenset({'number', 'variable', 'function', '('})

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
)
_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")


class ParseError(ValueError):
    """语法错误：记录首个错误的字节偏移与期望的记号集合"""

    def __init__(self, message: str, offset: int, expected: FrozenSet[str] = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f"，期望 {sorted(self.expected)}" if self.expected else ""
        super().__init__(f"{message} (offset {offset}){detail}")


class DomainError(ValueError):
    """定义域错误：对非正数取对数、除以零、溢出等"""

    def __init__(self, message: str, point=None):
        self.point = None if point is None else tuple(float(v) for v in np.ravel(point))
        where = f" at {self.point}" if self.point is not None else ""
        super().__init__(f"{message}{where}")


class DimensionError(ValueError):
    """点的维数与表达式或网格不一致"""


PointFunction = Callable[[np.ndarray], np.ndarray]


def as_points(points, dim: Optional[int] = None) -> np.ndarray:
    """把输入整理为 (n, d) 的浮点数组

    一维输入：dim == 1 时视为 n 个点，否则视为单个点
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        if dim == 1:
            X = X.reshape(-1, 1)
        else:
            X = X.reshape(1, -1)
    elif X.ndim != 2:
        raise DimensionError(f"点数组维数错误: shape={X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise DimensionError(f"点的维数 {X.shape[1]} 与期望维数 {dim} 不一致")
    return X


def _checked(values: np.ndarray, X: np.ndarray, op: str) -> np.ndarray:
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.argmax(bad))
        raise DomainError(f"{op} 超出定义域", X[i])
    return values


def evaluate_points(f: PointFunction, points) -> np.ndarray:
    """在一批点上求值任意向量化函数；NaN/inf 一律转成 DomainError"""
    X = as_points(points, getattr(f, 'dim', None))
    with np.errstate(all='ignore'):
        values = np.asarray(f(X), dtype=float).reshape(-1)
    if values.shape[0] != X.shape[0]:
        values = np.broadcast_to(values, (X.shape[0],)).copy()
    return _checked(values, X, 'eval')


# ---------------------------------------------------------------------------
# 语法树节点
# ---------------------------------------------------------------------------

class Node:
    """语法树节点基类"""

    precedence = 5

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def max_var(self) -> int:
        return 0

    def to_text(self) -> str:
        raise NotImplementedError


def _wrap(node: Node, parens: bool) -> str:
    text = node.to_text()
    return f"({text})" if parens else text


@dataclass(frozen=True)
class Const(Node):
    value: float

    @property
    def precedence(self) -> int:
        return 3 if self.value < 0 else 5

    def evaluate(self, X):
        return np.full(X.shape[0], self.value)

    def to_text(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Var(Node):
    index: int

    def evaluate(self, X):
        return X[:, self.index - 1]

    def max_var(self):
        return self.index

    def to_text(self):
        return f"x{self.index}"


@dataclass(frozen=True)
class NormSq(Node):
    def evaluate(self, X):
        return np.sum(X * X, axis=1)

    def to_text(self):
        return "normsq(x)"


@dataclass(frozen=True)
class Neg(Node):
    operand: Node
    precedence = 3

    def evaluate(self, X):
        return -self.operand.evaluate(X)

    def max_var(self):
        return self.operand.max_var()

    def to_text(self):
        return "-" + _wrap(self.operand, self.operand.precedence < 3)


_BINARY_PRECEDENCE = {'+': 1, '-': 1, '*': 2, '/': 2, '^': 4}


def _left_chain(node: Node) -> Tuple[Node, List[Tuple[str, Node]]]:
    """同优先级左结合链 ((a op b) op c) ... 展开为 (a, [(op, b), (op, c), ...])，沿左脊迭代"""
    prec = node.precedence
    links = []
    while isinstance(node, BinOp) and node.op != '^' and node.precedence == prec:
        links.append((node.op, node.right))
        node = node.left
    links.reverse()
    return node, links


def _apply(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if op == '+':
        return a + b
    if op == '-':
        return a - b
    if op == '*':
        return a * b
    if op == '/':
        return a / b
    return np.power(a, b)


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    @property
    def precedence(self) -> int:
        return _BINARY_PRECEDENCE[self.op]

    def _links(self) -> Tuple[Node, List[Tuple[str, Node]]]:
        if self.op == '^':
            return self.left, [(self.op, self.right)]
        return _left_chain(self)

    def evaluate(self, X):
        base, links = self._links()
        out = base.evaluate(X)
        for op, right in links:
            out = _checked(_apply(op, out, right.evaluate(X)), X, op)
        return out

    def max_var(self):
        base, links = self._links()
        return max([base.max_var()] + [right.max_var() for _, right in links])

    def to_text(self):
        prec = self.precedence
        if self.op == '^':
            # 底数必须是原子；指数允许一元负号
            left = _wrap(self.left, self.left.precedence < 5)
            right = _wrap(self.right, self.right.precedence < 3)
            return f"{left}^{right}"
        base, links = _left_chain(self)
        parts = [_wrap(base, base.precedence < prec)]
        for op, right in links:
            text = _wrap(right, right.precedence <= prec)
            parts.append(f" {op} {text}" if prec == 1 else f"{op}{text}")
        return ''.join(parts)


@dataclass(frozen=True)
class Call(Node):
    name: str
    args: Tuple[Node, ...]

    def evaluate(self, X):
        values = [a.evaluate(X) for a in self.args]
        if self.name == 'exp':
            out = np.exp(values[0])
        elif self.name == 'log':
            out = np.log(values[0])
        elif self.name == 'sqrt':
            out = np.sqrt(values[0])
        elif self.name == 'abs':
            out = np.abs(values[0])
        elif self.name == 'min':
            out = np.minimum.reduce(values)
        else:
            out = np.maximum.reduce(values)
        return _checked(out, X, self.name)

    def max_var(self):
        return max(a.max_var() for a in self.args)

    def to_text(self):
        return f"{self.name}({', '.join(a.to_text() for a in self.args)})"


@dataclass(frozen=True)
class Expr:
    """解析后的表达式，记录元数 d；可直接作用于 (n, d) 点数组"""

    root: Node
    dim: int
    source: Optional[str] = field(default=None, compare=False)

    def __call__(self, points) -> np.ndarray:
        X = as_points(points, self.dim)
        with np.errstate(all='ignore'):
            return np.asarray(self.root.evaluate(X), dtype=float)

    def to_text(self) -> str:
        return self.root.to_text()

    def __str__(self) -> str:
        return self.to_text()


# ---------------------------------------------------------------------------
# 解析器
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> List[_Token]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"无法识别的字符 {text[pos]!r}", pos, ATOM_START | {'+', '-', '*', '/', '^', ')', ','})
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), pos))
        pos = m.end()
    tokens.append(_Token('end', '', n))
    return tokens


class _Parser:
    """递归下降解析器

    expr  := term (('+'|'-') term)*
    term  := unary (('*'|'/') unary)*
    unary := '-' unary | power
    power := atom ('^' unary)?
    """

    def __init__(self, text: str, dim: int):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.dim = dim
        self.depth = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def is_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == 'op' and tok.text in ops

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if not (tok.kind == 'op' and tok.text == op):
            raise ParseError(f"期望 {op!r}", tok.offset, frozenset({op}))
        return self.advance()

    @contextmanager
    def nested(self, tok: _Token) -> Iterator[None]:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ParseError("嵌套层数过深", tok.offset)
        try:
            yield
        finally:
            self.depth -= 1

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != 'end':
            raise ParseError("表达式后存在多余输入", tok.offset,
                             frozenset({'+', '-', '*', '/', '^', 'end'}))
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.is_op('+', '-'):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.is_op('*', '/'):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.is_op('-'):
            tok = self.advance()
            with self.nested(tok):
                return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.is_op('^'):
            tok = self.advance()
            with self.nested(tok):
                return BinOp('^', base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.peek()
        if tok.kind == 'num':
            self.advance()
            value = float(tok.text)
            if not np.isfinite(value):
                raise ParseError("数值常量溢出", tok.offset)
            return Const(value)
        if tok.kind == 'name':
            return self.named(tok)
        if tok.kind == 'op' and tok.text == '(':
            self.advance()
            with self.nested(tok):
                node = self.expr()
            self.expect_op(')')
            return node
        raise ParseError("期望数字、变量、函数或 '('", tok.offset, ATOM_START)

    def named(self, tok: _Token) -> Node:
        name = tok.text
        m = _VAR_RE.match(name)
        if m:
            self.advance()
            index = int(m.group(1))
            if index > self.dim:
                raise ParseError(f"变量 {name} 超出维数 d={self.dim}", tok.offset,
                                 frozenset(f"x{i}" for i in range(1, self.dim + 1)))
            return Var(index)
        if name in CONSTANTS:
            self.advance()
            return Const(float(CONSTANTS[name]))
        if name == 'normsq':
            self.advance()
            self.expect_op('(')
            arg = self.peek()
            if not (arg.kind == 'name' and arg.text == 'x'):
                raise ParseError("normsq 的参数只能是 x", arg.offset, frozenset({'x'}))
            self.advance()
            self.expect_op(')')
            return NormSq()
        if name in UNARY_FUNCTIONS or name in NARY_FUNCTIONS:
            self.advance()
            args = self.arguments(tok)
            if name in UNARY_FUNCTIONS and len(args) != 1:
                raise ParseError(f"{name} 只接受一个参数", tok.offset)
            if name == 'neg':
                return Neg(args[0])
            return Call(name, tuple(args))
        if name == 'x':
            raise ParseError("裸变量 x 只能作为 normsq 的参数", tok.offset, frozenset({'variable'}))
        raise ParseError(f"未知名称 {name!r}", tok.offset, ATOM_START)

    def arguments(self, tok: _Token) -> List[Node]:
        self.expect_op('(')
        args = []
        with self.nested(tok):
            args.append(self.expr())
            while self.is_op(','):
                self.advance()
                args.append(self.expr())
        self.expect_op(')')
        return args


def parse(text: str, dim: int) -> Expr:
    """解析表达式文本

    Args:
        text: 表达式文本，如 'x1^2/2'
        dim: 变量维数 d

    Returns:
        Expr: 语法树

    Raises:
        ParseError: 语法错误（带偏移量与期望记号集合）或变量下标越界
    """
    if dim < 1:
        raise ValueError(f"维数必须 >= 1: {dim}")
    if not isinstance(text, str) or not text.strip():
        raise ParseError("表达式为空", 0, ATOM_START)
    root = _Parser(text, dim).parse()
    return Expr(root, dim, source=text)


def eval_expr(e: Expr, p) -> float:
    """在单点 p 处求值"""
    X = as_points(p, e.dim)
    if X.shape[0] != 1:
        raise DimensionError("eval_expr 只接受单个点")
    return float(evaluate_points(e, X)[0])


# ---------------------------------------------------------------------------
# 有限差分
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffConfig:
    """中心差分配置

    h 为 None 时按点自动取步长：梯度 grad_scale·(1+|p|∞)，海森 hess_scale·(1+|p|∞)
    """

    h: Optional[float] = None
    richardson: bool = DIFF_CONFIG['richardson']
    grad_scale: float = DIFF_CONFIG['grad_scale']
    hess_scale: float = DIFF_CONFIG['hess_scale']

    def __post_init__(self):
        if self.h is not None and not self.h > 0:
            raise ValueError(f"差分步长必须为正: {self.h}")

    def steps(self, X: np.ndarray, scale: float) -> np.ndarray:
        if self.h is not None:
            return np.full(X.shape[0], float(self.h))
        return scale * (1.0 + np.max(np.abs(X), axis=1))

    def validate_for(self, diameter: float) -> None:
        """步长需小于区域直径的 1e-2"""
        if self.h is not None and self.h >= 1e-2 * diameter:
            raise ValueError(f"差分步长 {self.h} 相对区域直径 {diameter} 过大")


def _gradient_once(f: PointFunction, X: np.ndarray, h: np.ndarray) -> np.ndarray:
    n, d = X.shape
    G = np.empty((n, d))
    for i in range(d):
        shift = np.zeros(d)
        shift[i] = 1.0
        step = h[:, None] * shift
        values = evaluate_points(f, np.vstack([X + step, X - step]))
        G[:, i] = (values[:n] - values[n:]) / (2.0 * h)
    return G


def _hessian_once(f: PointFunction, X: np.ndarray, h: np.ndarray) -> np.ndarray:
    n, d = X.shape
    H = np.empty((n, d, d))
    f0 = evaluate_points(f, X)
    eye = np.eye(d)
    h2 = h * h
    for i in range(d):
        ei = h[:, None] * eye[i]
        values = evaluate_points(f, np.vstack([X + ei, X - ei]))
        H[:, i, i] = (values[:n] - 2.0 * f0 + values[n:]) / h2
        for j in range(i + 1, d):
            ej = h[:, None] * eye[j]
            corners = evaluate_points(f, np.vstack([X + ei + ej, X + ei - ej, X - ei + ej, X - ei - ej]))
            pp, pm, mp, mm = corners[:n], corners[n:2 * n], corners[2 * n:3 * n], corners[3 * n:]
            H[:, i, j] = H[:, j, i] = (pp - pm - mp + mm) / (4.0 * h2)
    return H


def grad_points(f: PointFunction, points, cfg: Optional[DiffConfig] = None) -> np.ndarray:
    """批量中心差分梯度，返回 (n, d)"""
    cfg = cfg or DiffConfig()
    X = as_points(points, getattr(f, 'dim', None))
    h = cfg.steps(X, cfg.grad_scale)
    G = _gradient_once(f, X, h)
    if cfg.richardson:
        G = (4.0 * _gradient_once(f, X, h / 2.0) - G) / 3.0
    return G


def hess_points(f: PointFunction, points, cfg: Optional[DiffConfig] = None) -> np.ndarray:
    """批量二阶中心差分海森矩阵，返回对称的 (n, d, d)"""
    cfg = cfg or DiffConfig()
    X = as_points(points, getattr(f, 'dim', None))
    h = cfg.steps(X, cfg.hess_scale)
    H = _hessian_once(f, X, h)
    if cfg.richardson:
        H = (4.0 * _hessian_once(f, X, h / 2.0) - H) / 3.0
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def grad(e: PointFunction, p, cfg: Optional[DiffConfig] = None) -> np.ndarray:
    """单点梯度

    Args:
        e: 表达式或向量化函数
        p: 点
        cfg: 差分配置

    Returns:
        np.ndarray: 长度为 d 的梯度向量
    """
    return grad_points(e, as_points(p, getattr(e, 'dim', None))[:1], cfg)[0]


def hess(e: PointFunction, p, cfg: Optional[DiffConfig] = None) -> np.ndarray:
    """单点海森矩阵，按 (H+Hᵀ)/2 对称化"""
    return hess_points(e, as_points(p, getattr(e, 'dim', None))[:1], cfg)[0]


def lambda_expr(func: PointFunction, dim: int) -> PointFunction:
    """给任意向量化函数附上维数，便于与 Expr 混用"""
    func.dim = dim
    logger.debug(f"包装向量化函数, d={dim}")
    return func
