"""Shared builders and brute-force oracles used across the test suite.

Everything here is deliberately written as straight-line, loop-heavy code so
it can serve as an independent check on the vectorized library paths.
"""

import numpy as np

from kgdial.kg import KnowledgeGraph, SubGraph, Triple, build_kg, stop_action


def finite_difference(f, arrays, eps=1e-5):
    """Central-difference gradients of scalar f w.r.t. a list of arrays."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=float)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / denom


def build_lattice_kg(rows, cols):
    """Grid-walk graph: entities are lattice cells, relations are unit steps.

    The gold structure is exactly translational, so a translation-based
    scorer can represent it with zero error.
    """
    name = lambda r, c: f"cell_{r}_{c}"
    triples = []
    for r in range(rows):
        for c in range(cols):
            if r + 1 < rows:
                triples.append((name(r, c), "step_down", name(r + 1, c)))
            if c + 1 < cols:
                triples.append((name(r, c), "step_right", name(r, c + 1)))
    return build_kg(triples)


def brute_force_link_prediction(kg, table, mode):
    """Independent rank computation: explicit loops, no shared code paths.

    A competitor outranks the true entity when its distance is <= the true
    distance (pessimistic ties). Filter mode skips corruptions that are
    themselves graph triples.
    """
    def dist(h, r, t):
        v = table.entity_vectors[h] + table.relation_vectors[r] - table.entity_vectors[t]
        return float(np.sqrt(np.sum(v * v)))

    truth = {(t.subject, t.predicate, t.object) for t in kg.triples}
    ranks = []
    for tr in kg.triples:
        true_d = dist(tr.subject, tr.predicate, tr.object)
        rank_t = 1
        for e in range(kg.n_entities):
            if e == tr.object:
                continue
            if mode == "filter" and (tr.subject, tr.predicate, e) in truth:
                continue
            if dist(tr.subject, tr.predicate, e) <= true_d:
                rank_t += 1
        rank_h = 1
        for e in range(kg.n_entities):
            if e == tr.subject:
                continue
            if mode == "filter" and (e, tr.predicate, tr.object) in truth:
                continue
            if dist(e, tr.predicate, tr.object) <= true_d:
                rank_h += 1
        ranks.extend([rank_t, rank_h])
    return {
        "mean_rank": sum(ranks) / len(ranks),
        "hits_at_10": sum(r <= 10 for r in ranks) / len(ranks),
        "hits_at_1": sum(r == 1 for r in ranks) / len(ranks),
    }


def enumerate_action_paths(kg, start, hops):
    """Every sequence of exactly `hops` non-STOP actions leaving `start`."""
    if hops == 0:
        return [[]]
    out = []
    for prefix in enumerate_action_paths(kg, start, hops - 1):
        current = prefix[-1].target if prefix else start
        for act in kg.outgoing_actions(current):
            if not act.is_stop:
                out.append(prefix + [act])
    return out


def enumerate_complete_paths(kg, start, max_hops):
    """Every STOP-terminated action sequence of at most `max_hops` moves."""
    complete = []
    for hops in range(max_hops + 1):
        for moves in enumerate_action_paths(kg, start, hops):
            end = moves[-1].target if moves else start
            complete.append(tuple(moves) + (stop_action(end),))
    return complete


def actions_to_subgraph(start, actions):
    """Rebuild the annotated sub-graph a sequence of non-STOP actions walks."""
    triples, flags = [], []
    current = start
    for act in actions:
        if act.inverse:
            triples.append(Triple(act.target, act.relation, current))
        else:
            triples.append(Triple(current, act.relation, act.target))
        flags.append(act.inverse)
        current = act.target
    return SubGraph(tuple(triples), tuple(flags), start)


def log_softmax_np(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def exhaustive_beam_oracle(model, sample, kg, lexicon, max_len):
    """Score every EOS-terminated token sequence of at most max_len non-EOS
    tokens by teacher forcing, one batched decode per length level.

    Returns [(tokens, log_prob, forced)] sorted like the beam: descending
    log-prob, ties by token tuple. `forced` marks full-length sequences.
    """
    from kgdial.autodiff import no_grad
    from kgdial.prompting import BOS, EOS, encode_sample

    seq = encode_sample(sample, kg, lexicon, model.vocab)
    results = []
    with no_grad():
        memory = model.encode(seq, sample.sub_graph)
        non_eos = [t for t in range(len(model.vocab)) if t != EOS]
        prefixes = [()]
        for level in range(max_len + 1):
            ids = np.array([(BOS, *p) for p in prefixes])
            logp = log_softmax_np(model.decode(ids, memory).data)
            for bi, p in enumerate(prefixes):
                lp = sum(logp[bi, k, p[k]] for k in range(level))
                lp += logp[bi, level, EOS]
                results.append((p + (EOS,), float(lp), level == max_len))
            if level < max_len:
                prefixes = [p + (t,) for p in prefixes for t in non_eos]
    results.sort(key=lambda r: (-r[1], r[0]))
    return results


def entity_kind(kg: KnowledgeGraph, eid: int) -> str:
    """Movie / genre / person split for the synthetic corpus's graphs."""
    if kg.entity_name(eid).startswith("The "):
        return "movie"
    genre_rel = kg.relation_id("has_genre")
    if any(t.predicate == genre_rel and t.object == eid for t in kg.triples):
        return "genre"
    return "person"


def entities_by_kind(kg: KnowledgeGraph):
    table = {}
    for eid in range(kg.n_entities):
        table.setdefault(entity_kind(kg, eid), []).append(eid)
    return table


def corrupt_response(sample, kg, lexicon, by_kind, rng):
    """Replace every linked entity mention with a same-kind entity that is
    neither on the path nor mentioned in the history."""
    from kgdial.linking import ENTITY, link_mentions

    spans = sorted((sp for sp in link_mentions(sample.response, lexicon)
                    if sp.kind == ENTITY), key=lambda sp: -sp.start)
    banned = set(sample.sub_graph.entities())
    for _, text in sample.history:
        banned |= {sp.node for sp in link_mentions(text, lexicon)
                   if sp.kind == ENTITY}
    out = sample.response
    for sp in spans:
        options = [e for e in by_kind[entity_kind(kg, sp.node)] if e not in banned]
        wrong = options[int(rng.integers(len(options)))]
        out = out[:sp.start] + kg.entity_name(wrong) + out[sp.end:]
    return out


def manual_walk(model, history, response, actions, start, kg):
    """Plain-numpy recomputation of the teacher-forced walk. Returns the
    cumulative log-prob after every action."""
    from kgdial.autodiff import Tensor
    from kgdial.reranker import action_embed

    h, c = model.init_state(history, response)
    current = start
    cums, total = [], 0.0
    for act in actions:
        cands = kg.outgoing_actions(current)
        embeds = np.concatenate(
            [action_embed(a, model.kg_table, model).data for a in cands])
        logits = (h.data @ model.weights["w_score"].data) @ embeds.T
        logits = logits[0]
        p = np.exp(logits - logits.max())
        p = p / p.sum()
        idx = cands.index(act)
        total += float(np.log(p[idx]))
        cums.append(total)
        h, c = model._lstm_step(Tensor(embeds[idx:idx + 1]), h, c)
        current = act.target
    return cums
