"""Quoting of user code.

A :class:`Quoted` value carries user code twice: as something callable
during stage one and in the oracle, and as canonical single-line source
text that is spliced into per-location plans. Expressions are quoted
either from a string (``q("lambda v: v > k", k=2)``) or from a lambda /
single-``return`` function whose source is recoverable with ``inspect``.

Free names must resolve to a prelude helper, a whitelisted builtin or a
serializable constant; constants are inlined as literals when splicing.
"""

from __future__ import annotations

import ast
import inspect
import math
import re
import textwrap
import types
from dataclasses import dataclass, field
from typing import Any, Callable

from . import prelude
from .prelude import ClusterId


class StagingError(Exception):
    pass


class UnquotableCapture(StagingError):
    """A free name refers to a stage-one value that cannot be spliced as a literal."""

    def __init__(self, name: str, value: Any):
        self.name = name
        self.value = value
        super().__init__(f"cannot capture {name!r}: {type(value).__name__} is not a serializable constant")


class UnboundName(StagingError):
    pass


class NestedQuoteError(StagingError):
    pass


_QUOTE_NAMES = frozenset({"q", "quote"})


def is_constant(value: Any) -> bool:
    if value is None or isinstance(value, (bool, int, float, str, bytes)):
        return True
    if isinstance(value, (tuple, list, frozenset)):
        return all(is_constant(v) for v in value)
    if isinstance(value, dict):
        return all(is_constant(k) and is_constant(v) for k, v in value.items())
    return False


def literal(value: Any) -> str:
    """Python source text that evaluates to ``value`` inside quoted code."""
    if isinstance(value, ClusterId):
        return f"ClusterId({int(value)})"
    if isinstance(value, bool) or value is None:
        return repr(value)
    if isinstance(value, int):
        return repr(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return "float('nan')"
        if math.isinf(value):
            return "float('inf')" if value > 0 else "float('-inf')"
        return repr(value)
    if isinstance(value, (str, bytes)):
        return repr(value)
    if isinstance(value, tuple):
        inner = ", ".join(literal(v) for v in value)
        return f"({inner},)" if len(value) == 1 else f"({inner})"
    if isinstance(value, list):
        return "[" + ", ".join(literal(v) for v in value) + "]"
    if isinstance(value, frozenset):
        items = sorted((literal(v) for v in value))
        return "frozenset({" + ", ".join(items) + "})" if items else "frozenset()"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{literal(k)}: {literal(v)}" for k, v in value.items()) + "}"
    raise TypeError(f"no literal form for {type(value).__name__}")


class _FreeNames(ast.NodeVisitor):
    """Collect Name nodes not bound by an enclosing lambda or comprehension."""

    def __init__(self) -> None:
        self.scopes: list[set[str]] = [set()]
        self.free_nodes: list[ast.Name] = []

    def _bound(self, name: str) -> bool:
        return any(name in s for s in self.scopes)

    def visit_Name(self, node: ast.Name) -> None:
        if isinstance(node.ctx, ast.Load):
            if not self._bound(node.id):
                self.free_nodes.append(node)
        else:
            self.scopes[-1].add(node.id)

    def visit_Lambda(self, node: ast.Lambda) -> None:
        args = node.args
        for d in args.defaults:
            self.visit(d)
        for d in args.kw_defaults:
            if d is not None:
                self.visit(d)
        params = {a.arg for a in args.posonlyargs + args.args + args.kwonlyargs}
        if args.vararg:
            params.add(args.vararg.arg)
        if args.kwarg:
            params.add(args.kwarg.arg)
        self.scopes.append(params)
        self.visit(node.body)
        self.scopes.pop()

    def _comprehension(self, node, results) -> None:
        gens = node.generators
        self.visit(gens[0].iter)
        self.scopes.append(set())
        for i, gen in enumerate(gens):
            if i:
                self.visit(gen.iter)
            self.visit(gen.target)
            for cond in gen.ifs:
                self.visit(cond)
        for r in results:
            self.visit(r)
        self.scopes.pop()

    def visit_ListComp(self, node: ast.ListComp) -> None:
        self._comprehension(node, [node.elt])

    visit_SetComp = visit_ListComp
    visit_GeneratorExp = visit_ListComp

    def visit_DictComp(self, node: ast.DictComp) -> None:
        self._comprehension(node, [node.key, node.value])


def free_names(expr: ast.expr) -> list[ast.Name]:
    finder = _FreeNames()
    finder.visit(expr)
    return finder.free_nodes


class _Splice(ast.NodeTransformer):
    def __init__(self, targets: set[int], values: dict[str, str]):
        self.targets = targets
        self.values = values

    def visit_Name(self, node: ast.Name):
        if id(node) in self.targets and node.id in self.values:
            return ast.parse(self.values[node.id], mode="eval").body
        return node


def _reject_nested(expr: ast.expr) -> None:
    for node in ast.walk(expr):
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _QUOTE_NAMES:
            raise NestedQuoteError("quoted code may not itself quote expressions")


def _check_capture(name: str, value: Any) -> None:
    if isinstance(value, Quoted):
        raise NestedQuoteError(f"{name!r} is already a quoted expression; nested quoting is not supported")
    if not is_constant(value):
        raise UnquotableCapture(name, value)


@dataclass(frozen=True)
class Quoted:
    """User code held both as a callable and as canonical source text.

    For a lambda, ``eval`` is the function itself. For any other
    expression it is a zero-argument thunk that recomputes the value, so
    mutable initial values are fresh on every call.
    """

    source_text: str
    capture_list: tuple[tuple[str, str], ...]
    eval: Callable = field(compare=False, repr=False)
    is_function: bool = True
    runtime_only: bool = False
    element_type: Any = field(default=None, compare=False)

    @property
    def spliced_text(self) -> str:
        """Source text with every captured constant inlined as a literal."""
        if not self.capture_list:
            return self.source_text
        expr = ast.parse(self.source_text, mode="eval").body
        targets = {id(n) for n in free_names(expr)}
        spliced = _Splice(targets, dict(self.capture_list)).visit(expr)
        return ast.unparse(spliced)

    def __call__(self, *args):
        return self.eval(*args)


def _build(
    expr: ast.expr,
    captures: dict[str, Any],
    *,
    allow_runtime: bool,
) -> tuple[str, tuple[tuple[str, str], ...], dict[str, Any]]:
    _reject_nested(expr)
    text = ast.unparse(expr)
    used: dict[str, Any] = {}
    for node in free_names(expr):
        name = node.id
        if name in captures:
            value = captures[name]
            if prelude.is_prelude_value(name, value):
                continue
            _check_capture(name, value)
            used[name] = value
        elif name in prelude.RUNTIME_ONLY:
            if not allow_runtime:
                raise StagingError(f"{name!r} is only available through ids() or self_id_source()")
        elif name in prelude.SAFE_BUILTINS or name in prelude.HELPERS:
            continue
        elif name in _QUOTE_NAMES:
            raise NestedQuoteError("quoted code may not reference the quoting construct")
        else:
            raise UnboundName(f"free name {name!r} is not captured")
    capture_list = tuple((name, literal(used[name])) for name in sorted(used))
    return text, capture_list, used


def materialize(text: str, bindings: dict[str, Any] | None = None) -> tuple[Callable, bool]:
    """Compile quoted source text into ``(callable, is_function)``."""
    tree = ast.parse(text, mode="eval")
    code = compile(tree, "<quoted>", "eval")
    ns = prelude.namespace(bindings)
    if isinstance(tree.body, ast.Lambda):
        return eval(code, ns), True  # noqa: S307

    def thunk():
        return eval(code, ns)  # noqa: S307

    return thunk, False


def _quote_text(text: str, captures: dict[str, Any], allow_runtime: bool, element_type=None) -> Quoted:
    try:
        expr = ast.parse(text.strip(), mode="eval").body
    except SyntaxError as exc:
        raise StagingError(f"not a Python expression: {text!r}") from exc
    canonical, capture_list, used = _build(expr, captures, allow_runtime=allow_runtime)
    fn, is_function = materialize(canonical, used)
    return Quoted(canonical, capture_list, fn, is_function, allow_runtime, element_type)


def _lambda_args(code: types.CodeType) -> tuple[str, ...]:
    n = code.co_argcount + code.co_kwonlyargcount
    if code.co_flags & inspect.CO_VARARGS:
        n += 1
    if code.co_flags & inspect.CO_VARKEYWORDS:
        n += 1
    return code.co_varnames[:n]


def _node_args(node: ast.Lambda) -> tuple[str, ...]:
    a = node.args
    names = [x.arg for x in a.posonlyargs + a.args + a.kwonlyargs]
    if a.vararg:
        names.append(a.vararg.arg)
    if a.kwarg:
        names.append(a.kwarg.arg)
    return tuple(names)


def _consts_equal(a: tuple, b: tuple) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if isinstance(x, types.CodeType) and isinstance(y, types.CodeType):
            if not _same_code(x, y):
                return False
        elif type(x) is not type(y) or x != y:
            return False
    return True


def _same_code(a: types.CodeType, b: types.CodeType) -> bool:
    return (
        a.co_code == b.co_code
        and a.co_names == b.co_names
        and a.co_varnames == b.co_varnames
        and a.co_freevars == b.co_freevars
        and _consts_equal(a.co_consts, b.co_consts)
    )


def _compile_like(text: str, freevars: tuple[str, ...]) -> types.CodeType | None:
    # Recompile with the same free variables so closure loads match.
    pre = "".join(f"    {v} = None\n" for v in freevars)
    src = f"def __outer__():\n{pre}    return {text}\n"
    try:
        module = compile(src, "<quoted>", "exec")
    except SyntaxError:
        return None
    outer = next(c for c in module.co_consts if isinstance(c, types.CodeType))
    for c in outer.co_consts:
        if isinstance(c, types.CodeType) and c.co_name == "<lambda>":
            return c
    return None


def _find_lambda_source(fn: types.FunctionType) -> ast.expr:
    try:
        src = inspect.getsource(fn)
    except (OSError, TypeError) as exc:
        raise StagingError("source of the quoted function is unavailable; quote a string instead") from exc
    code = fn.__code__
    if fn.__name__ != "<lambda>":
        tree = ast.parse(textwrap.dedent(src))
        fdef = tree.body[0]
        body = [s for s in fdef.body if not (isinstance(s, ast.Expr) and isinstance(s.value, ast.Constant))]
        if not isinstance(fdef, ast.FunctionDef) or len(body) != 1 or not isinstance(body[0], ast.Return):
            raise StagingError(f"{fn.__name__} must consist of a single return statement to be quoted")
        return ast.Lambda(args=fdef.args, body=body[0].value)

    wanted = _lambda_args(code)
    by_args: dict[str, ast.Lambda] = {}
    for m in re.finditer(r"\blambda\b", src):
        for end in range(len(src), m.start(), -1):
            try:
                tree = ast.parse(src[m.start():end], mode="eval")
            except SyntaxError:
                continue
            if not isinstance(tree.body, ast.Lambda):
                continue
            if _node_args(tree.body) == wanted:
                by_args[ast.unparse(tree.body)] = tree.body
            break
    exact = [
        node for text, node in by_args.items()
        if (c := _compile_like(text, code.co_freevars)) is not None and _same_code(c, code)
    ]
    if len(exact) == 1:
        return exact[0]
    if not exact and len(by_args) == 1:
        return next(iter(by_args.values()))
    raise StagingError("could not locate the lambda's source unambiguously; quote a string instead")


def _quote_callable(fn: Callable, captures: dict[str, Any]) -> Quoted:
    if not isinstance(fn, types.FunctionType):
        raise StagingError(f"cannot quote {type(fn).__name__}; pass a lambda or an expression string")
    expr = _find_lambda_source(fn)
    code = fn.__code__
    closure = dict(zip(code.co_freevars, (c.cell_contents for c in fn.__closure__ or ())))
    resolved: dict[str, Any] = {}
    for node in free_names(expr):
        name = node.id
        if name in captures:
            resolved[name] = captures[name]
        elif name in closure:
            resolved[name] = closure[name]
        elif name in fn.__globals__:
            resolved[name] = fn.__globals__[name]
    canonical, capture_list, used = _build(expr, resolved, allow_runtime=False)
    ns = prelude.namespace(used)
    rebuilt = types.FunctionType(code, ns, fn.__name__, fn.__defaults__, fn.__closure__)
    rebuilt.__kwdefaults__ = fn.__kwdefaults__
    return Quoted(canonical, capture_list, rebuilt, True)


def quote(expression: str | Callable, **captures: Any) -> Quoted:
    """Capture ``expression`` for splicing into per-location plans.

    ``captures`` binds free names to stage-one constants. Functions quoted
    directly also pick up constants from their closure and module globals.
    """
    if isinstance(expression, Quoted):
        raise NestedQuoteError("expression is already quoted")
    if isinstance(expression, str):
        return _quote_text(expression, captures, allow_runtime=False)
    return _quote_callable(expression, captures)


q = quote


def runtime_quote(text: str, element_type: Any = None, **captures: Any) -> Quoted:
    """Quote code that may use runtime-only helpers; for builder internals."""
    return _quote_text(text, captures, allow_runtime=True, element_type=element_type)
