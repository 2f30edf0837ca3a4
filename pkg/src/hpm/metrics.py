"""Single-query CMC and mAP with Market-1501 style junk filtering."""
from dataclasses import dataclass

import numpy as np

from .retrieval import distance_matrix, rank

REPORT_RANKS = (1, 5, 10)


@dataclass
class EvalReport:
    cmc: np.ndarray  # cmc[k]: fraction of valid queries with a hit within rank k+1
    map: float
    per_query_ap: np.ndarray
    num_valid_queries: int
    had_ties: bool = False

    def to_text(self):
        lines = [f"map={self.map:.6f}"]
        lines += [f"cmc_{r}={self.cmc[r - 1]:.6f}" for r in REPORT_RANKS if r <= len(self.cmc)]
        lines += [f"num_valid_queries={self.num_valid_queries}", f"ties={int(self.had_ties)}"]
        return "\n".join(lines) + "\n"

    def cmc_csv(self):
        return "".join(f"{k + 1},{rate:.6f}\n" for k, rate in enumerate(self.cmc))


def junk_mask(q_pid, q_cam, g_pids, g_cams):
    """True where a gallery item takes part in the query's evaluation.

    Items of the same person seen by the same camera, and distractors
    (negative ids), are excluded.
    """
    g_pids = np.asarray(g_pids)
    g_cams = np.asarray(g_cams)
    junk = ((g_pids == q_pid) & (g_cams == q_cam)) | (g_pids < 0)
    return ~junk


def average_precision(relevant):
    relevant = np.asarray(relevant, dtype=bool)
    total = relevant.sum()
    if total == 0:
        raise ValueError("average precision needs at least one relevant item")
    hits = np.cumsum(relevant)
    ranks = np.arange(1, len(relevant) + 1)
    return float((hits / ranks)[relevant].sum() / total)


def cmc_curve(relevance_lists, topk):
    """CMC over ranks 1..topk from per-query relevance flags in rank order.

    Queries without any relevant item are ignored.
    """
    curve = np.zeros(topk)
    valid = 0
    for rel in relevance_lists:
        rel = np.asarray(rel, dtype=bool)
        if not rel.any():
            continue
        first = int(np.argmax(rel))
        if first < topk:
            curve[first:] += 1
        valid += 1
    return curve / valid if valid else curve


def evaluate(queries, gallery, topk=10):
    """Score every query against the gallery; see EvalReport."""
    if len(queries) == 0 or len(gallery) == 0:
        raise ValueError("empty query or gallery set")
    if topk < 1:
        raise ValueError("topk must be at least 1")
    dist = distance_matrix(queries.vectors, gallery.vectors)
    rel_lists, aps, ties = [], [], False
    for q in range(len(queries)):
        valid = junk_mask(queries.pids[q], queries.cams[q], gallery.pids, gallery.cams)
        if not valid.any():
            continue
        order = rank(dist[q], valid)
        rel = gallery.pids[order] == queries.pids[q]
        if not rel.any():
            continue
        d = dist[q][order]
        ties = ties or bool(np.any(d[1:] == d[:-1]))
        rel_lists.append(rel)
        aps.append(average_precision(rel))
    if not aps:
        raise ValueError("no query has a valid match in the gallery")
    aps = np.array(aps)
    return EvalReport(cmc_curve(rel_lists, topk), float(aps.mean()), aps, len(aps), ties)
