"""Independent reference implementations used as test oracles.

Everything here is deliberately naive — dense matrices, python loops,
brute-force scans — so that agreement with the optimized code under test
is meaningful.  Nothing in this module imports from hoptrace except the
Tensor type for gradient checking.
"""

import numpy as np


def finite_difference(f, x, step=1e-5):
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = float(f(x))
        flat[i] = keep - step
        down = float(f(x))
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * step)
    return g


def gradcheck(f, tensors, step=1e-5, tol=1e-4, skip_below=1e-8):
    """Compare analytic gradients of scalar-valued f against central
    differences for every tensor in `tensors`.

    Returns the worst relative error seen.  Entries where both the
    numeric and analytic gradients are below `skip_below` in combined
    magnitude are skipped (relative error is meaningless at zero).
    """
    out = f()
    out.backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "no gradient reached a checked tensor"
        analytic = t.grad.copy()
        numeric = finite_difference(lambda _x, _t=t: f().data, t.data, step)
        denom = np.abs(analytic) + np.abs(numeric)
        mask = denom >= skip_below
        if not mask.any():
            continue
        rel = np.abs(analytic - numeric)[mask] / denom[mask]
        worst = max(worst, float(rel.max()))
    assert worst <= tol, f"gradient mismatch: worst rel err {worst:.3e} > {tol}"
    return worst


def dense_predicate_matrices(n, heads, preds, tails, num_predicates):
    """One dense n×n adjacency per predicate; M[p][h, t] = 1."""
    mats = [np.zeros((n, n)) for _ in range(num_predicates)]
    for h, p, t in zip(heads, preds, tails):
        mats[p][h, t] = 1.0
    return mats


def dense_label_transfer(n, heads, preds, tails, num_predicates, a, p_scores):
    """Reference for one label-form transfer: sum_p p_scores[p] * (a @ M_p)."""
    mats = dense_predicate_matrices(n, heads, preds, tails, num_predicates)
    out = np.zeros(n)
    for k, m in enumerate(mats):
        out += p_scores[k] * (a @ m)
    return out


def dense_text_transfer(n, rel_heads, rel_tails, scores, a, aggregation="sum"):
    """Reference for one text-form transfer over an explicit relation list.

    `aggregation` mirrors the sum/max switch: with "max", parallel
    relations between the same (head, tail) pair contribute only their
    strongest score instead of adding up.
    """
    out = np.zeros(n)
    if aggregation == "sum":
        for h, t, s in zip(rel_heads, rel_tails, scores):
            out[t] += a[h] * s
        return out
    best = {}
    for h, t, s in zip(rel_heads, rel_tails, scores):
        key = (int(h), int(t))
        best[key] = max(best.get(key, 0.0), a[h] * s)
    for (h, t), v in best.items():
        out[t] += v
    return out


def truncate_reference(a):
    out = a.copy()
    out[out > 1.0] = 1.0
    return out


def bfs_answers(triples, topic, hops):
    """Entities reachable from `topic` in exactly `hops` steps following
    (head, tail) pairs of the given triples.  Pure python BFS."""
    frontier = {topic}
    for _ in range(hops):
        nxt = set()
        for h, _p, t in triples:
            if h in frontier:
                nxt.add(t)
        frontier = nxt
    return frontier


def brute_select(a, tau, omega, rel_heads, rel_ids=None):
    """Reference for sparse text-relation selection.

    Relations whose subject entity scores above tau, capped at the omega
    highest subject scores; ties broken by lower entity id then lower
    relation id.  Falls back to the argmax entity when nothing clears tau.
    """
    if rel_ids is None:
        rel_ids = list(range(len(rel_heads)))
    active = [e for e in range(len(a)) if a[e] > tau]
    if not active:
        active = [int(np.argmax(a))]
    chosen = [(r, h) for r, h in zip(rel_ids, rel_heads) if h in set(active)]
    chosen.sort(key=lambda rh: (-a[rh[1]], rh[1], rh[0]))
    if omega is not None:
        chosen = chosen[:omega]
    return sorted(r for r, _h in chosen)
