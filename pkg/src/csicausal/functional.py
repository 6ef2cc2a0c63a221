"""Symbolic identifying functionals and their evaluation on discrete joints.

Expressions are immutable trees. Evaluation works on whole tables: every node
evaluates to a :class:`Factor` over its free variables, so a functional can be
compared against ground truth for all treatment/outcome values at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import reduce
from typing import Mapping

import numpy as np


class EvaluationError(ValueError):
    pass


def _fixed(items) -> tuple:
    if isinstance(items, Mapping):
        items = items.items()
    return tuple(sorted((str(k), str(v)) for k, v in items))


class Expr:
    """Base class for functional expression nodes."""

    def free(self) -> frozenset:
        raise NotImplementedError

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class Atomic(Expr):
    """``p(vars | given)``; names listed in ``fixed`` are pinned to a level."""

    vars: tuple
    given: tuple = ()
    fixed: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "given", tuple(self.given))
        object.__setattr__(self, "fixed", _fixed(self.fixed))
        if not self.vars:
            raise ValueError("Atomic needs at least one variable")
        if set(self.vars) & set(self.given):
            raise ValueError("a variable cannot appear on both sides of the bar")

    def free(self):
        pinned = {k for k, _ in self.fixed}
        return frozenset(self.vars + self.given) - pinned


@dataclass(frozen=True)
class Expectation(Expr):
    """``E(var | given)`` with optional pinned conditioning values."""

    var: str
    given: tuple = ()
    fixed: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "given", tuple(self.given))
        object.__setattr__(self, "fixed", _fixed(self.fixed))

    def free(self):
        pinned = {k for k, _ in self.fixed}
        return frozenset(self.given) - pinned


@dataclass(frozen=True)
class Product(Expr):
    children: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))

    def free(self):
        return frozenset().union(*(c.free() for c in self.children))


@dataclass(frozen=True)
class SumOver(Expr):
    vars: tuple
    child: Expr

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))

    def free(self):
        return self.child.free() - set(self.vars)


@dataclass(frozen=True)
class Fraction(Expr):
    numerator: Expr
    denominator: Expr

    def free(self):
        return self.numerator.free() | self.denominator.free()


@dataclass(frozen=True)
class IndicatorMix(Expr):
    """``sum_m 1(var=m) * arm_m``: ``var`` is bound, each arm sees ``var=m``."""

    var: str
    arms: tuple

    def __post_init__(self):
        arms = tuple((str(k), v) for k, v in self.arms)
        if len({k for k, _ in arms}) != len(arms):
            raise ValueError("duplicate indicator levels")
        object.__setattr__(self, "arms", arms)

    def free(self):
        return frozenset().union(*(a.free() for _, a in self.arms)) - {self.var}


def substitute(expr: Expr, values: Mapping) -> Expr:
    """Pin free variables to levels (``{"M": "0"}``), respecting bound names."""
    values = {str(k): str(v) for k, v in values.items()}
    if not values:
        return expr
    if isinstance(expr, Atomic):
        names = set(expr.vars + expr.given)
        extra = {k: v for k, v in values.items() if k in names}
        return Atomic(expr.vars, expr.given, dict(expr.fixed) | extra)
    if isinstance(expr, Expectation):
        extra = {k: v for k, v in values.items() if k in expr.given}
        return Expectation(expr.var, expr.given, dict(expr.fixed) | extra)
    if isinstance(expr, Product):
        return Product(tuple(substitute(c, values) for c in expr.children))
    if isinstance(expr, SumOver):
        inner = {k: v for k, v in values.items() if k not in expr.vars}
        return SumOver(expr.vars, substitute(expr.child, inner))
    if isinstance(expr, Fraction):
        return Fraction(substitute(expr.numerator, values), substitute(expr.denominator, values))
    if isinstance(expr, IndicatorMix):
        inner = {k: v for k, v in values.items() if k != expr.var}
        return IndicatorMix(expr.var, tuple((m, substitute(a, inner)) for m, a in expr.arms))
    raise TypeError(type(expr))


# -- tables ---------------------------------------------------------------------


@dataclass
class Factor:
    """A non-negative table with one named axis per variable."""

    vars: tuple
    values: np.ndarray

    def aligned(self, order) -> np.ndarray:
        present = [v for v in order if v in self.vars]
        arr = np.transpose(self.values, [self.vars.index(v) for v in present])
        shape = [arr.shape[present.index(v)] if v in self.vars else 1 for v in order]
        return arr.reshape(shape)


def _union(*var_lists):
    out = []
    for vs in var_lists:
        for v in vs:
            if v not in out:
                out.append(v)
    return tuple(out)


class JointTable:
    """Exact joint distribution of discrete variables.

    Parameters
    ----------
    vars : sequence of str
        Axis names.
    levels : mapping
        Level values for every variable, in axis order.
    probs : ndarray
        Probabilities with one axis per variable. Must sum to one.
    """

    def __init__(self, vars, levels, probs):
        self.vars = tuple(vars)
        self.levels = {v: tuple(levels[v]) for v in self.vars}
        self.probs = np.asarray(probs, dtype=float)
        if self.probs.shape != tuple(len(self.levels[v]) for v in self.vars):
            raise ValueError("probability array shape does not match the levels")
        total = self.probs.sum()
        if not np.isclose(total, 1.0, atol=1e-12, rtol=0):
            raise ValueError(f"joint sums to {total!r}, not 1")
        self._marginals = {}

    def card(self, v) -> int:
        return len(self.levels[v])

    def index(self, var, value) -> int:
        for i, lv in enumerate(self.levels[var]):
            if lv == value or str(lv) == str(value):
                return i
            try:
                if float(lv) == float(value):
                    return i
            except (TypeError, ValueError):
                pass
        raise EvaluationError(f"{value!r} is not a level of {var}")

    def marginal(self, vars) -> Factor:
        vars = tuple(vars)
        unknown = set(vars) - set(self.vars)
        if unknown:
            raise EvaluationError(f"table has no variable(s) {sorted(unknown)}")
        key = frozenset(vars)
        if key not in self._marginals:
            keep = [v for v in self.vars if v in key]
            drop = tuple(i for i, v in enumerate(self.vars) if v not in key)
            self._marginals[key] = Factor(tuple(keep), self.probs.sum(axis=drop))
        m = self._marginals[key]
        return Factor(vars, m.aligned(vars))

    def restrict(self, keep) -> "JointTable":
        m = self.marginal([v for v in self.vars if v in set(keep)])
        return JointTable(m.vars, {v: self.levels[v] for v in m.vars}, m.values)

    def numeric_levels(self, var) -> np.ndarray:
        return np.array([float(v) for v in self.levels[var]])


# -- evaluation --------------------------------------------------------------------


def _pin(f: Factor, fixed, dist: JointTable) -> Factor:
    arr, vars = f.values, list(f.vars)
    for name, value in fixed:
        if name not in vars:
            continue
        ax = vars.index(name)
        arr = np.take(arr, dist.index(name, value), axis=ax)
        vars.pop(ax)
    return Factor(tuple(vars), arr)


def _describe_zero(f: Factor, dist, fixed) -> str:
    idx = np.argwhere(f.values == 0)[0]
    parts = [f"{v}={dist.levels[v][i]}" for v, i in zip(f.vars, idx)]
    parts += [f"{k}={v}" for k, v in fixed]
    return "P(" + ", ".join(parts) + ") = 0"


def _divide(num: Factor, den: Factor) -> Factor:
    order = _union(num.vars, den.vars)
    d = den.aligned(order)
    return Factor(order, num.aligned(order) / d)


def evaluate_factor(expr: Expr, dist: JointTable) -> Factor:
    """Evaluate ``expr`` to a factor over its free variables."""
    if isinstance(expr, Atomic):
        joint = _pin(dist.marginal(expr.vars + expr.given), expr.fixed, dist)
        if not expr.given:
            return joint
        den = _pin(dist.marginal(expr.given), expr.fixed, dist)
        if np.any(den.values == 0):
            given_fixed = [(k, v) for k, v in expr.fixed if k in expr.given]
            raise EvaluationError(
                "division by zero probability: " + _describe_zero(den, dist, given_fixed)
            )
        return _divide(joint, den)
    if isinstance(expr, Expectation):
        cond = evaluate_factor(Atomic((expr.var,), expr.given, expr.fixed), dist)
        y = Factor((expr.var,), dist.numeric_levels(expr.var))
        order = cond.vars
        prod = cond.values * y.aligned(order)
        ax = order.index(expr.var)
        return Factor(tuple(v for v in order if v != expr.var), prod.sum(axis=ax))
    if isinstance(expr, Product):
        if not expr.children:
            return Factor((), np.array(1.0))
        parts = [evaluate_factor(c, dist) for c in expr.children]
        order = _union(*(p.vars for p in parts))
        return Factor(order, reduce(np.multiply, (p.aligned(order) for p in parts)))
    if isinstance(expr, SumOver):
        inner = evaluate_factor(expr.child, dist)
        arr, vars = inner.values, list(inner.vars)
        for v in expr.vars:
            if v in vars:
                ax = vars.index(v)
                arr = arr.sum(axis=ax)
                vars.pop(ax)
            else:
                arr = arr * dist.card(v)
        return Factor(tuple(vars), arr)
    if isinstance(expr, Fraction):
        num = evaluate_factor(expr.numerator, dist)
        den = evaluate_factor(expr.denominator, dist)
        if np.any(den.values == 0):
            raise EvaluationError("division by zero probability: " + _describe_zero(den, dist, ()))
        return _divide(num, den)
    if isinstance(expr, IndicatorMix):
        parts = []
        for level, arm in expr.arms:
            f = evaluate_factor(arm, dist)
            parts.append(_pin(f, ((expr.var, level),), dist))
        order = _union(*(p.vars for p in parts))
        return Factor(order, sum(p.aligned(order) for p in parts))
    raise TypeError(f"cannot evaluate {type(expr).__name__}")


def evaluate(expr: Expr, dist: JointTable, assignment: Mapping | None = None) -> float:
    """Value of ``expr`` at ``assignment`` (which must bind every free variable)."""
    assignment = dict(assignment or {})
    f = evaluate_factor(expr, dist)
    missing = set(f.vars) - set(assignment)
    if missing:
        raise EvaluationError(f"no value given for free variable(s) {sorted(missing)}")
    idx = tuple(dist.index(v, assignment[v]) for v in f.vars)
    return float(f.values[idx])


# -- simplification ------------------------------------------------------------


def _mentions(expr: Expr, v) -> bool:
    return v in expr.free()


def _conditioning(expr) -> frozenset:
    """Conditioning set with pinned values, for matching total-probability pairs."""
    pins = dict(expr.fixed)
    return frozenset((g, pins.get(g)) for g in expr.given)


def _drop_given(expr, v):
    given = tuple(g for g in expr.given if g != v)
    fixed = tuple((k, val) for k, val in expr.fixed if k != v)
    if isinstance(expr, Atomic):
        return Atomic(expr.vars, given, fixed)
    return Expectation(expr.var, given, fixed)


def _eliminate(var, factors):
    """Try one total-probability rewrite for summed ``var``; None if impossible."""
    hits = [i for i, f in enumerate(factors) if _mentions(f, var)]
    if len(hits) == 1:
        f = factors[hits[0]]
        if isinstance(f, Atomic) and var in f.vars:
            rest = tuple(x for x in f.vars if x != var)
            out = list(factors)
            if rest:
                out[hits[0]] = Atomic(rest, f.given, tuple((k, val) for k, val in f.fixed if k != var))
            else:
                out.pop(hits[0])
            return out
        return None
    if len(hits) == 2:
        for a, b in (hits, hits[::-1]):
            fa, fb = factors[a], factors[b]
            if not (isinstance(fa, Atomic) and fa.vars == (var,)):
                continue
            if not isinstance(fb, (Atomic, Expectation)) or var not in fb.given:
                continue
            if isinstance(fb, Atomic) and var in fb.vars:
                continue
            if _conditioning(fa) == _conditioning(fb) - {(var, None)}:
                out = [f for i, f in enumerate(factors) if i not in (a, b)]
                out.insert(min(a, b), _drop_given(fb, var))
                return out
    return None


def _flatten(children):
    out = []
    for c in children:
        if isinstance(c, Product):
            out.extend(_flatten(c.children))
        else:
            out.append(c)
    return out


def _simplify_once(expr: Expr) -> Expr:
    if isinstance(expr, (Atomic, Expectation)):
        return expr
    if isinstance(expr, Product):
        kids = _flatten(_simplify_once(c) for c in expr.children)
        return kids[0] if len(kids) == 1 else Product(tuple(kids))
    if isinstance(expr, Fraction):
        return Fraction(_simplify_once(expr.numerator), _simplify_once(expr.denominator))
    if isinstance(expr, IndicatorMix):
        return IndicatorMix(expr.var, tuple((m, _simplify_once(a)) for m, a in expr.arms))
    if isinstance(expr, SumOver):
        child = _simplify_once(expr.child)
        vars = list(expr.vars)
        if isinstance(child, SumOver):
            vars += [v for v in child.vars if v not in vars]
            child = child.child
        vars = [v for v in vars if v in child.free()] + [v for v in vars if v not in child.free()]
        factors = _flatten([child])
        changed = True
        while changed:
            changed = False
            for v in list(vars):
                if v not in Product(tuple(factors)).free():
                    continue
                new = _eliminate(v, factors)
                if new is not None:
                    factors, changed = new, True
                    vars.remove(v)
        bound = set(vars)
        hoisted = [f for f in factors if not (f.free() & bound)]
        inner = [f for f in factors if f.free() & bound]
        if not vars:
            body = inner
        elif inner:
            body_expr = inner[0] if len(inner) == 1 else Product(tuple(inner))
            body = [SumOver(tuple(vars), body_expr)]
        else:
            # sum over variables nothing depends on
            body = [SumOver(tuple(vars), Product(()))]
        out = hoisted + body
        if not out:
            return Product(())
        return out[0] if len(out) == 1 else Product(tuple(out))
    raise TypeError(type(expr))


def simplify(expr: Expr) -> Expr:
    """Apply total-probability eliminations and constant hoisting to a fixpoint."""
    prev = None
    while prev != expr:
        prev, expr = expr, _simplify_once(expr)
    return expr


# -- serialization -------------------------------------------------------------


def _term(name, fixed):
    pins = dict(fixed)
    return f"{name}={pins[name]}" if name in pins else name


def to_text(expr: Expr) -> str:
    """Deterministic LaTeX-like rendering."""
    if isinstance(expr, Atomic):
        left = ",".join(_term(v, expr.fixed) for v in expr.vars)
        if expr.given:
            return f"p({left}|{','.join(_term(v, expr.fixed) for v in expr.given)})"
        return f"p({left})"
    if isinstance(expr, Expectation):
        if expr.given:
            return f"E({expr.var}|{','.join(_term(v, expr.fixed) for v in expr.given)})"
        return f"E({expr.var})"
    if isinstance(expr, Product):
        if not expr.children:
            return "1"
        parts = []
        for c in expr.children:
            s = to_text(c)
            parts.append(f"\\left({s}\\right)" if isinstance(c, (SumOver, IndicatorMix)) else s)
        return " ".join(parts)
    if isinstance(expr, SumOver):
        inner = to_text(expr.child)
        if isinstance(expr.child, (Product, SumOver, IndicatorMix)):
            inner = f"\\left({inner}\\right)"
        return f"\\sum_{{{','.join(expr.vars)}}} {inner}"
    if isinstance(expr, Fraction):
        return f"\\frac{{{to_text(expr.numerator)}}}{{{to_text(expr.denominator)}}}"
    if isinstance(expr, IndicatorMix):
        arms = [f"\\mathbf{{1}}({expr.var}={m}) {to_text(a)}" for m, a in expr.arms]
        return f"\\sum_{{{expr.var}}} \\left({' + '.join(arms)}\\right)"
    raise TypeError(type(expr))


def to_dict(expr: Expr) -> dict:
    """Kind-tagged JSON-ready tree."""
    if isinstance(expr, Atomic):
        return {"kind": "atomic", "vars": list(expr.vars), "given": list(expr.given),
                "fixed": dict(expr.fixed)}
    if isinstance(expr, Expectation):
        return {"kind": "expectation", "var": expr.var, "given": list(expr.given),
                "fixed": dict(expr.fixed)}
    if isinstance(expr, Product):
        return {"kind": "product", "children": [to_dict(c) for c in expr.children]}
    if isinstance(expr, SumOver):
        return {"kind": "sum", "vars": list(expr.vars), "child": to_dict(expr.child)}
    if isinstance(expr, Fraction):
        return {"kind": "fraction", "numerator": to_dict(expr.numerator),
                "denominator": to_dict(expr.denominator)}
    if isinstance(expr, IndicatorMix):
        return {"kind": "indicator_mix", "var": expr.var,
                "arms": [{"level": m, "expr": to_dict(a)} for m, a in expr.arms]}
    raise TypeError(type(expr))


def from_dict(d: dict) -> Expr:
    kind = d["kind"]
    if kind == "atomic":
        return Atomic(d["vars"], d.get("given", ()), d.get("fixed", {}))
    if kind == "expectation":
        return Expectation(d["var"], d.get("given", ()), d.get("fixed", {}))
    if kind == "product":
        return Product(tuple(from_dict(c) for c in d["children"]))
    if kind == "sum":
        return SumOver(d["vars"], from_dict(d["child"]))
    if kind == "fraction":
        return Fraction(from_dict(d["numerator"]), from_dict(d["denominator"]))
    if kind == "indicator_mix":
        return IndicatorMix(d["var"], tuple((a["level"], from_dict(a["expr"])) for a in d["arms"]))
    raise ValueError(f"unknown expression kind {kind!r}")


def to_json(expr: Expr, **kw) -> str:
    return json.dumps(to_dict(expr), sort_keys=True, **kw)
