"""Causal effect identification: per-context effects, recombination, counterfactuals.

The per-context engine first tries a backdoor adjustment with the canonical
pre-treatment set and falls back to the Shpitser-Pearl ID recursion on the
latent projection of the context graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .functional import (
    Atomic,
    Expectation,
    Expr,
    Fraction,
    IndicatorMix,
    Product,
    SumOver,
    substitute,
    to_dict,
    to_text,
)
from .graph import Admg, Dag, GraphError, d_separated, latent_project, latent_sources
from .ldag import Ldag, LdagError, normalize_context, project

IDENTIFIED, NOT_IDENTIFIED = "identified", "not_identified"


class IdentificationError(ValueError):
    pass


class ContextDescendantError(IdentificationError):
    """The context variable is affected by the treatment."""


@dataclass(frozen=True)
class IdentResult:
    status: str
    functional: Expr | None = None
    witness: str | None = None
    adjustment_set: frozenset | None = None
    estimand: str = ""
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.functional is None) == (self.witness is None):
            raise ValueError("exactly one of functional/witness must be set")
        if (self.status == IDENTIFIED) != (self.functional is not None):
            raise ValueError("status does not match the populated field")

    @property
    def identified(self) -> bool:
        return self.status == IDENTIFIED

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "context": dict(self.context),
            "status": self.status,
            "adjustment_set": sorted(self.adjustment_set) if self.adjustment_set is not None else None,
            "functional": to_dict(self.functional) if self.functional is not None else None,
            "text": to_text(self.functional) if self.functional is not None else None,
            "witness": self.witness,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _not_identified(witness, estimand, context=None):
    return IdentResult(NOT_IDENTIFIED, witness=witness, estimand=estimand, context=dict(context or {}))


# -- ID recursion -------------------------------------------------------------------


class _Hedge(Exception):
    def __init__(self, district, subdistrict, graph):
        self.district, self.subdistrict, self.graph = district, subdistrict, graph
        super().__init__("hedge")


@dataclass(frozen=True)
class _Dist:
    """Current distribution in the recursion: observational (expr None) or derived."""

    vars: frozenset
    expr: Expr | None = None

    def marginal(self, keep) -> "_Dist":
        keep = frozenset(keep)
        if self.expr is None or keep == self.vars:
            return _Dist(keep, self.expr)
        return _Dist(keep, SumOver(_ordered(self.vars - keep), self.expr))

    def marginal_expr(self, keep, order) -> Expr:
        keep = [v for v in order if v in keep]
        if self.expr is None:
            return Atomic(tuple(keep))
        drop = self.vars - set(keep)
        return SumOver(_ordered(drop, order), self.expr) if drop else self.expr

    def conditional(self, v, given) -> Expr:
        given = tuple(given)
        if self.expr is None:
            return Atomic((v,), given)
        num_drop = self.vars - set(given) - {v}
        den_drop = self.vars - set(given)
        num = SumOver(_ordered(num_drop), self.expr) if num_drop else self.expr
        return Fraction(num, SumOver(_ordered(den_drop), self.expr))


def _ordered(vs, order=None):
    if order is None:
        return tuple(sorted(vs))
    return tuple(v for v in order if v in vs)


def _id(y, x, P: _Dist, G: Admg, order) -> Expr:
    V = frozenset(G.nodes)
    order = [v for v in order if v in V]
    if not x:
        return P.marginal_expr(y, order)
    an_y = G.ancestors(y)
    if V != an_y:
        return _id(y, x & an_y, P.marginal(an_y), G.subgraph(an_y), order)
    W = (V - x) - G.without_incoming(x).ancestors(y)
    if W:
        return _id(y, x | W, P, G, order)
    rest = G.subgraph(V - x)
    comps = rest.districts()
    if len(comps) > 1:
        terms = tuple(_id(s, V - s, P, G, order) for s in comps)
        return SumOver(_ordered(V - (y | x), order), Product(terms))
    S = comps[0]
    full = G.districts()
    if len(full) == 1:
        raise _Hedge(V, S, G)
    if S in full:
        terms = tuple(P.conditional(v, order[: order.index(v)]) for v in order if v in S)
        prod = Product(terms) if len(terms) > 1 else terms[0]
        drop = _ordered(S - y, order)
        return SumOver(drop, prod) if drop else prod
    bigger = next(c for c in full if S < c)
    terms = tuple(P.conditional(v, order[: order.index(v)]) for v in order if v in bigger)
    prod = Product(terms) if len(terms) > 1 else terms[0]
    return _id(y, x & bigger, _Dist(bigger, prod), G.subgraph(bigger), order)


def _describe_hedge(h: _Hedge, x, dag: Dag | None = None, observed=None) -> str:
    arcs = sorted(e for e in h.graph.bidirected if e[0] in h.district and e[1] in h.district)
    arc_txt = []
    for a, b in arcs:
        txt = f"{a} <-> {b}"
        if dag is not None:
            src = latent_sources(dag, observed, a, b)
            if src:
                txt += f" (via latent {', '.join(src)})"
        arc_txt.append(txt)
    return (
        f"hedge for intervention on {{{', '.join(sorted(x))}}}: district "
        f"{{{', '.join(sorted(h.district))}}} contains sub-district "
        f"{{{', '.join(sorted(h.subdistrict))}}}; confounding arcs: " + "; ".join(arc_txt)
    )


def _as_set(v):
    return frozenset([v]) if isinstance(v, str) else frozenset(v)


def id_effect(admg: Admg, X, Y, *, _dag=None, _observed=None) -> IdentResult:
    """Identify ``P(Y | do(X))`` in an ADMG with the ID recursion."""
    X, Y = _as_set(X), _as_set(Y)
    estimand = f"P({','.join(sorted(Y))}|do({','.join(sorted(X))}))"
    known = set(admg.nodes)
    if not X <= known or not Y <= known:
        raise GraphError(f"treatment/outcome not in graph: {sorted((X | Y) - known)}")
    if X & Y:
        raise IdentificationError("treatment and outcome overlap")
    order = admg.topological_order()
    try:
        expr = _id(Y, X, _Dist(frozenset(admg.nodes)), admg, order)
    except _Hedge as h:
        return _not_identified(_describe_hedge(h, X, _dag, _observed), estimand)
    return IdentResult(IDENTIFIED, functional=expr, estimand=estimand)


# -- context-specific effects ---------------------------------------------------------


def backdoor_valid(dag: Dag, X, Y, S) -> bool:
    """Backdoor criterion: no descendant of X in S, and S blocks every backdoor path."""
    X, Y, S = _as_set(X), _as_set(Y), frozenset(S)
    if S & dag.descendants(X):
        return False
    return d_separated(dag.without_outgoing(X), X, Y, S)


def _single_context(ldag: Ldag, ctx):
    ctx = normalize_context(ldag, ctx)
    if len(ctx) != 1:
        raise LdagError("exactly one context variable must be assigned")
    (M, m), = ctx.items()
    return ctx, M, m


def identify_context_effect(ldag: Ldag, X: str, Y: str, ctx) -> IdentResult:
    """Identify ``P(Y | do(X), M=m)`` in the context graph for ``ctx = {M: m}``.

    Returns a :class:`Fraction` whose numerator is ``P(Y, M=m | do(X))`` and
    whose denominator is that numerator summed over ``Y``. When a backdoor set
    exists the numerator is ``p(M=m) sum_S p(S|M=m) p(Y|X,S,M=m)`` and
    ``adjustment_set`` holds ``S``.
    """
    ctx, M, m = _single_context(ldag, ctx)
    estimand = f"P({Y}|do({X}),{M}={m})"
    observed = ldag.observed
    for v in (X, Y):
        if v not in observed:
            raise IdentificationError(f"{v} is not an observed node")
    if M in (X, Y):
        raise IdentificationError("context variable cannot be the treatment or outcome")
    g = project(ldag, ctx)
    if M in g.descendants(X):
        raise ContextDescendantError(f"context variable {M} is a descendant of treatment {X}")

    pins = {M: m}
    candidate = (g.ancestors({X, Y}) & observed) - g.descendants(X) - {Y, M}
    if backdoor_valid(g, X, Y, candidate | {M}):
        S = tuple(v for v in g.topological_order() if v in candidate)
        outcome = Atomic((Y,), (X, M) + S, pins)
        if S:
            inner = SumOver(S, Product((Atomic(S, (M,), pins), outcome)))
            num = Product((Atomic((M,), (), pins), inner))
        else:
            num = Product((Atomic((M,), (), pins), outcome))
        return IdentResult(
            IDENTIFIED,
            functional=Fraction(num, SumOver((Y,), num)),
            adjustment_set=frozenset(candidate),
            estimand=estimand,
            context=ctx,
        )

    admg = latent_project(g, observed)
    res = id_effect(admg, X, {Y, M}, _dag=g, _observed=observed)
    if not res.identified:
        return _not_identified(f"context {M}={m}: {res.witness}", estimand, ctx)
    num = substitute(res.functional, pins)
    return IdentResult(
        IDENTIFIED,
        functional=Fraction(num, SumOver((Y,), num)),
        estimand=estimand,
        context=ctx,
    )


CAVEAT = (
    "per-context identification is neither necessary nor sufficient in general; "
    "recombination is valid here because the context variable is observed and "
    "not a descendant of the treatment"
)


def combine_contexts(ldag: Ldag, X: str, Y: str, M: str | None) -> IdentResult:
    """Identify ``P(Y | do(X))`` as ``sum_m 1(M=m) p(M=m) P(Y | do(X), M=m)``."""
    estimand = f"P({Y}|do({X}))"
    if M is None:
        if ldag.label_contexts():
            raise IdentificationError("graph has labelled edges; name the context variable")
        g = project(ldag, {})
        return id_effect(latent_project(g, ldag.observed), X, Y, _dag=g, _observed=ldag.observed)
    if M not in ldag.contexts:
        raise IdentificationError(f"{M} is not a context variable")
    others = ldag.label_contexts() - {M}
    if others:
        raise IdentificationError(f"labels also reference {sorted(others)}")
    arms = []
    for m in ldag.contexts[M]:
        g = project(ldag, {M: m})
        if M in g.descendants(X):
            raise ContextDescendantError(
                f"context variable {M} is a descendant of {X} when {M}={m}; " + CAVEAT
            )
        res = identify_context_effect(ldag, X, Y, {M: m})
        if not res.identified:
            return _not_identified(f"context {M}={m} not identified: {res.witness}", estimand)
        arms.append((m, Product((Atomic((M,), (), {M: m}), res.functional))))
    return IdentResult(IDENTIFIED, functional=IndicatorMix(M, tuple(arms)), estimand=estimand)


def counterfactual_functional(ldag: Ldag, X: str, Y: str, ctx, x, x_cf) -> IdentResult:
    """Identify ``E(Y_{x_cf} | X=x, M=m)`` by conditional backdoor adjustment.

    The covariate distribution is conditioned on the factual ``X=x`` while the
    outcome regression is evaluated at ``X=x_cf``.
    """
    ctx, M, m = _single_context(ldag, ctx)
    estimand = f"E({Y}_{{{x_cf}}}|{X}={x},{M}={m})"
    res = identify_context_effect(ldag, X, Y, ctx)
    if not res.identified:
        return _not_identified(res.witness, estimand, ctx)
    if res.adjustment_set is None:
        return _not_identified(
            f"context {M}={m}: effect identified but no backdoor adjustment set exists", estimand, ctx
        )
    g = project(ldag, ctx)
    bad = res.adjustment_set & (g.descendants(X) - {X})
    if bad:
        raise IdentificationError(f"adjustment set contains descendants of {X}: {sorted(bad)}")
    S = tuple(v for v in g.topological_order() if v in res.adjustment_set)
    outcome = Expectation(Y, (X,) + S + (M,), {X: x_cf, M: m})
    if S:
        expr = SumOver(S, Product((Atomic(S, (X, M), {X: x, M: m}), outcome)))
    else:
        expr = outcome
    return IdentResult(
        IDENTIFIED, functional=expr, adjustment_set=res.adjustment_set, estimand=estimand, context=ctx
    )


def check_conditioned_counterfactual(ldag: Ldag, X: str, Y: str, ctx) -> IdentResult:
    """``E(Y_{x+1} | Y=y, X=x, M=m)`` is rejected for every graph."""
    ctx = normalize_context(ldag, ctx)
    where = ",".join(f"{k}={v}" for k, v in ctx.items())
    estimand = f"E({Y}_{{x+1}}|{Y}=y,{X}=x{',' + where if where else ''})"
    return _not_identified(
        f"{estimand}: conditioning on the factual outcome requires the joint law of "
        f"{Y}_x and {Y}_{{x+1}} for the same unit, which observational data do not determine",
        estimand,
        ctx,
    )
