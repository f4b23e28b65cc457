"""Brute-force reference implementations used as test oracles."""

from __future__ import annotations

import itertools

import numpy as np

from reconfig.narx import Batch, loss


def forward_chains(modules, order_, max_depth):
    """Every operator chain, executed forwards, kept under the search's declared rules."""
    ops = [(m.id, c.id, o) for m in modules for c in m.configurations for o in c.operators]
    found = set()
    for n in range(max_depth + 1):
        for chain in itertools.product(ops, repeat=n):
            cfg_of = {}
            if any(cfg_of.setdefault(mid, cid) != cid for mid, cid, _ in chain):
                continue  # one configuration per module
            state = order_.input
            ok = True
            for _, _, o in chain:
                if not all(o.input[k].contains(state[k]) if k in state else False for k in o.input):
                    ok = False
                    break
                state = o.output
            if not ok or not all(k in state and order_.output[k].contains(state[k]) for k in order_.output):
                continue
            # frontiers seen walking back from the output: all distinct, and the
            # input must satisfy only the last one (the search stops at the first)
            frontiers = [order_.output] + [o.input for _, _, o in reversed(chain)]
            if len(set(frontiers)) != len(frontiers):
                continue
            sat = [all(k in order_.input and f[k].contains(order_.input[k]) for k in f) for f in frontiers]
            if any(sat[:-1]):
                continue
            found.add(tuple((mid, cid, o.id) for mid, cid, o in chain))
    return found


def permutation_filter(seq, graph, occupied=()):
    """All injective module -> location maps whose consecutive modules sit on an edge."""
    mods = list(dict.fromkeys(s.module for s in seq))
    hops = [(a.module, b.module) for a, b in zip(seq, seq[1:]) if a.module != b.module]
    edges = {frozenset((e.a, e.b)) for e in graph.edges}
    free = [loc for loc in graph.locations if loc not in set(occupied)]
    out = set()
    for locs in itertools.permutations(free, len(mods)):
        p = dict(zip(mods, locs))
        if all(frozenset((p[a], p[b])) in edges for a, b in hops):
            out.add(tuple(zip(mods, locs)))
    return out


def floyd_time(graph):
    """All-pairs shortest time."""
    inf = float("inf")
    d = {(a, b): (0.0 if a == b else inf) for a in graph.locations for b in graph.locations}
    for e in graph.edges:
        d[e.a, e.b] = min(d[e.a, e.b], e.effort.time)
        d[e.b, e.a] = min(d[e.b, e.a], e.effort.time)
    for k, i, j in itertools.product(graph.locations, repeat=3):
        d[i, j] = min(d[i, j], d[i, k] + d[k, j])
    return d


def best_simple_path(graph, a, b):
    """Lexicographically smallest (time, energy, cost) over all simple paths, or None."""
    if a == b:
        return (0.0, 0.0, 0.0)
    adj = {}
    for e in graph.edges:
        adj.setdefault(e.a, []).append((e.b, e.effort))
        adj.setdefault(e.b, []).append((e.a, e.effort))
    best = None

    def walk(node, seen, acc):
        nonlocal best
        if node == b:
            if best is None or acc < best:
                best = acc
            return
        for nxt, eff in adj.get(node, []):
            if nxt not in seen:
                walk(nxt, seen | {nxt}, (acc[0] + eff.time, acc[1] + eff.energy, acc[2] + eff.cost))

    walk(a, {a}, (0.0, 0.0, 0.0))
    return best


# --- gradients -------------------------------------------------------------


def random_batch(m, rng, n=6):
    wf = m.f.sizes[0]
    wh = m.h.sizes[0]
    return Batch(rng.normal(size=(n, wf)), rng.normal(size=(n, m.m_y)), rng.normal(size=(n, wh)), rng.normal(size=(n, m.m_u)))


def finite_difference(m, batch, step=1e-5):
    out = []
    for p in m.f.params() + m.h.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            up = loss(m, batch)
            p[idx] = old - step
            down = loss(m, batch)
            p[idx] = old
            g[idx] = (up - down) / (2 * step)
        out.append(g)
    return out


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6))))
    return worst
