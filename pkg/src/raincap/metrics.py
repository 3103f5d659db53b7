"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr and an exact-match METEOR.

A corpus maps image ids to ``(hypothesis, [reference, ...])`` with every
sentence already tokenized. A plain list of such pairs is accepted too.
"""
import math
from collections import Counter
from functools import lru_cache

from . import kernels

ROUGE_BETA = 1.2
CIDER_SCALE = 10.0
MAX_N = 4
FLAGS = "bleu_smoothing=none rouge_beta=1.2 cider_scale=10 cider_idf=log(M/max(1,df)) meteor=exact_only"


def _entries(corpus):
    items = list(corpus.values()) if isinstance(corpus, dict) else list(corpus)
    if not items:
        raise ValueError("empty corpus")
    out = []
    for hyp, refs in items:
        refs = [list(r) for r in refs]
        if not refs:
            raise ValueError("every hypothesis needs at least one reference")
        out.append((list(hyp), refs))
    return out


def ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(corpus, n_max=MAX_N):
    """Corpus BLEU-1..n_max without smoothing."""
    entries = _entries(corpus)
    matched = [0] * n_max
    total = [0] * n_max
    c = r = 0
    for hyp, refs in entries:
        c += len(hyp)
        # closest reference length, shorter one on ties
        r += min((abs(len(ref) - len(hyp)), len(ref)) for ref in refs)[1]
        for n in range(1, n_max + 1):
            h = ngrams(hyp, n)
            best = Counter()
            for ref in refs:
                best |= ngrams(ref, n)
            matched[n - 1] += sum(min(k, best[g]) for g, k in h.items())
            total[n - 1] += sum(h.values())
    if c == 0:
        return [0.0] * n_max
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    scores, logsum = [], 0.0
    for n in range(n_max):
        if matched[n] == 0:
            scores.extend([0.0] * (n_max - n))
            break
        logsum += math.log(matched[n] / total[n])
        scores.append(bp * math.exp(logsum / (n + 1)))
    return scores


def rouge_l_pair(hyp, ref, beta=ROUGE_BETA):
    if not hyp or not ref:
        return 0.0
    ids = {}
    lcs = kernels.lcs_length([ids.setdefault(t, len(ids)) for t in hyp], [ids.setdefault(t, len(ids)) for t in ref])
    if lcs == 0:
        return 0.0
    rec, prec = lcs / len(ref), lcs / len(hyp)
    return (1 + beta**2) * rec * prec / (rec + beta**2 * prec)


def rouge_l(corpus, beta=ROUGE_BETA):
    entries = _entries(corpus)
    return sum(max(rouge_l_pair(h, r, beta) for r in refs) for h, refs in entries) / len(entries)


def _tfidf(counts, df, m):
    return {g: k * math.log(m / max(1, df[g])) for g, k in counts.items()}


def _cosine(u, v, cu, cv):
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        # identical gram counts are a perfect match even when every weight vanishes
        return 1.0 if cu == cv else 0.0
    return sum(x * v.get(g, 0.0) for g, x in u.items()) / (nu * nv)


def cider_per_image(corpus, n_max=MAX_N):
    entries = _entries(corpus)
    m = len(entries)
    if m < 2:
        raise ValueError("CIDEr needs at least two images")
    df = [Counter() for _ in range(n_max)]
    for _, refs in entries:
        for n in range(n_max):
            grams = set()
            for ref in refs:
                grams.update(ngrams(ref, n + 1))
            df[n].update(grams)
    out = []
    for hyp, refs in entries:
        per_n = []
        for n in range(n_max):
            ch = ngrams(hyp, n + 1)
            vh = _tfidf(ch, df[n], m)
            sims = []
            for ref in refs:
                cr = ngrams(ref, n + 1)
                sims.append(_cosine(vh, _tfidf(cr, df[n], m), ch, cr))
            per_n.append(sum(sims) / len(sims))
        out.append(CIDER_SCALE * sum(per_n) / n_max)
    return out


def cider(corpus, n_max=MAX_N):
    scores = cider_per_image(corpus, n_max)
    return sum(scores) / len(scores)


def align(hyp, ref):
    """Exact unigram alignment with the most matches, then the fewest chunks.

    Returns ``(matches, chunks)``.
    """
    hyp, ref = tuple(hyp), tuple(ref)
    slots = {w: [j for j, t in enumerate(ref) if t == w] for w in set(hyp)}

    @lru_cache(maxsize=None)
    def best(i, used, prev):
        # (matches, -chunks) for hyp[i:], given used ref positions and the
        # ref position of hyp[i-1] (-1 when it was unmatched)
        if i == len(hyp):
            return 0, 0
        m, c = best(i + 1, used, -1)
        top = (m, c)
        for j in slots[hyp[i]]:
            if used >> j & 1:
                continue
            m, c = best(i + 1, used | 1 << j, j)
            cand = (m + 1, c - (0 if prev >= 0 and j == prev + 1 else 1))
            top = max(top, cand)
        return top

    m, neg_chunks = best(0, 0, -1)
    return m, -neg_chunks


def meteor_pair(hyp, ref):
    if not hyp or not ref:
        return 0.0
    m, chunks = align(hyp, ref)
    if m == 0:
        return 0.0
    p, r = m / len(hyp), m / len(ref)
    f = 10 * p * r / (r + 9 * p)
    return f * (1.0 - 0.5 * (chunks / m) ** 3)


def meteor_simplified(corpus):
    entries = _entries(corpus)
    return sum(max(meteor_pair(h, r) for r in refs) for h, refs in entries) / len(entries)


def score_all(corpus):
    b = bleu(corpus)
    return {
        "BLEU-1": b[0],
        "BLEU-2": b[1],
        "BLEU-3": b[2],
        "BLEU-4": b[3],
        "METEOR": meteor_simplified(corpus),
        "ROUGE": rouge_l(corpus),
        "CIDEr": cider(corpus),
    }


COLUMNS = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE", "CIDEr")
ROWS = (
    ("nic_t", "NIC_T"),
    ("nic_s", "NIC_S"),
    ("nic_t_d", "NIC_T(D)"),
    ("proposed", "Proposed"),
    ("clean", "NIC_T (clean input)"),
)


def _fmt(col, v):
    return f"{v:.4f}" if col == "CIDEr" else f"{100 * v:.2f}"


def evaluate_table(corpora, config_hash="", seed=0):
    """Score each route and render (scores, tsv_text, table_text).

    ``corpora`` maps nic_t, nic_s, nic_t_d, proposed and clean to corpora
    over the same images.
    """
    missing = [k for k, _ in ROWS if k not in corpora]
    if missing:
        raise ValueError(f"missing corpora for modes: {', '.join(missing)}")
    ids = None
    for key, _ in ROWS:
        c = corpora[key]
        keys = sorted(c) if isinstance(c, dict) else list(range(len(c)))
        if ids is not None and keys != ids:
            raise ValueError(f"mode {key} was evaluated on a different image set")
        ids = keys
    scores = {key: score_all(corpora[key]) for key, _ in ROWS}
    header = [f"# config_hash={config_hash} seed={seed} images={len(ids)}", f"# {FLAGS}"]
    tsv = header + ["\t".join(("encoder",) + COLUMNS)]
    tsv += ["\t".join([label] + [_fmt(c, scores[k][c]) for c in COLUMNS]) for k, label in ROWS]
    width = max(len(label) for _, label in ROWS)
    table = header + [" ".join([f"{'encoder':<{width}}"] + [f"{c:>8}" for c in COLUMNS])]
    table.append("-" * len(table[-1]))
    table += [" ".join([f"{label:<{width}}"] + [f"{_fmt(c, scores[k][c]):>8}" for c in COLUMNS]) for k, label in ROWS]
    return scores, "\n".join(tsv) + "\n", "\n".join(table) + "\n"
