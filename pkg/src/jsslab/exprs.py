"""Expression mini-language used by the input files.

Grammar: numbers, the named variables of the context, ``pi``, the binary
operators ``+ - * / ^`` (``**`` is accepted as a synonym of ``^``), unary
minus, parentheses and the functions ``exp log sin cos sinh cosh sqrt``.
Expressions are validated on the Python AST before they reach sympy, so no
arbitrary code can be evaluated. Derivatives are taken symbolically.
"""

import ast

import numpy as np
import sympy as sp

from .errors import ParseError

FUNCTIONS = {
    "exp": sp.exp,
    "log": sp.log,
    "sin": sp.sin,
    "cos": sp.cos,
    "sinh": sp.sinh,
    "cosh": sp.cosh,
    "sqrt": sp.sqrt,
}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


def _convert(node, symbols, text):
    if isinstance(node, ast.Expression):
        return _convert(node.body, symbols, text)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Float(node.value)
    if isinstance(node, ast.Name):
        if node.id in symbols:
            return symbols[node.id]
        if node.id == "pi":
            return sp.pi
        raise ParseError(f"unknown name {node.id!r} in expression {text!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](
            _convert(node.left, symbols, text), _convert(node.right, symbols, text)
        )
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _convert(node.operand, symbols, text)
        return -val if isinstance(node.op, ast.USub) else val
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in FUNCTIONS
        and len(node.args) == 1
        and not node.keywords
    ):
        return FUNCTIONS[node.func.id](_convert(node.args[0], symbols, text))
    raise ParseError(f"unsupported construct in expression {text!r}")


class Expr:
    """A parsed scalar expression in a fixed list of variables.

    Calling it evaluates with numpy broadcasting; ``diff(name)`` returns the
    exact partial derivative as another ``Expr``.
    """

    def __init__(self, text, variables=("x", "y"), _sym=None):
        self.variables = tuple(variables)
        self._symbols = {v: sp.Symbol(v, real=True) for v in self.variables}
        if _sym is None:
            source = str(text).replace("^", "**")
            try:
                tree = ast.parse(source, mode="eval")
            except SyntaxError as exc:
                raise ParseError(f"cannot parse expression {text!r}: {exc.msg}") from None
            _sym = _convert(tree, self._symbols, text)
        self.text = str(text)
        self.sym = sp.sympify(_sym)
        args = [self._symbols[v] for v in self.variables]
        self._fn = sp.lambdify(args, self.sym, modules="numpy")

    def __call__(self, *values):
        out = self._fn(*values)
        shape = np.broadcast(*[np.asarray(v, dtype=float) for v in values]).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)

    def diff(self, name):
        return Expr(f"d({self.text})/d{name}", self.variables, _sym=sp.diff(self.sym, self._symbols[name]))

    def __repr__(self):
        return f"Expr({self.text!r})"


def parse(text, variables=("x", "y")):
    """Parse ``text`` (string or number) into an :class:`Expr`."""
    if isinstance(text, (int, float)):
        text = repr(float(text))
    return Expr(text, variables)
