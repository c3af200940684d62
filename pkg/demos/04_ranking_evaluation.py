# %% [markdown]
# # Filtered tail ranking
#
# For each test fact all entities are scored as candidate tails.  Other known
# tails of the same `(h, r)` are removed ("filtered") and ties go to the lower
# entity index.  WMRR weights each reciprocal rank by the fact's confidence.

# %%
import numpy as np

from sscdl.dataset import KnownTriples
from sscdl.diagnostics import brute_force_ranks, check_ranking_oracle
from sscdl.evaluation import rank_tails, ranking_metrics
from sscdl.model import init_params
from sscdl.toy import make_toy_ukg

quads, vocab = make_toy_ukg(12, 2, 40, seed=3)
params = init_params(12, 2, 4, seed=1)
known = KnownTriples(quads.triples, 12, 2)
print("filtered:", rank_tails(params, quads.triples[:8], known).tolist())
print("raw     :", rank_tails(params, quads.triples[:8], known, filtered=False).tolist())

# %% [markdown]
# The brute-force oracle scores one candidate triple at a time with the
# literal concatenation network and sorts in plain Python.

# %%
known_set = set(map(tuple, quads.triples.tolist()))
print("oracle  :", brute_force_ranks(params, quads.triples[:8], known_set))
ranks = rank_tails(params, quads.triples, known)
print("WMRR %.4f  Hits@1 %.4f" % ranking_metrics(ranks, quads.confidence))

# %%
print(check_ranking_oracle(n_queries=300).line())
