"""
Retrieval metrics and inference cost
====================================

Each caption is a query against every image. mAP@K checks whether the
caption's own image is retrieved; BLEU-4@K checks how close the retrieved
images' captions are to the query. The FLOPS model compares what each
strategy pays at inference.
"""

# %%
import numpy as np

from capagg.evaluation import (RetrievalIndex, retrieve, map_at_k, flops_table, reference_cost_model,
                               CostModel, format_table)

ids = ["b", "a", "c"]
vectors = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])  # "a" and "b" point the same way
retrieve(np.array([1.0, 0.1]), RetrievalIndex(ids, vectors), 3)  # tie broken by id

# %%
rankings = [["a", "b", "c"], ["c", "a", "b"]]
map_at_k(rankings, [{"a"}, {"a"}], 3)  # (1 + 1/2) / 2

# %%
# linear cost model calibrated so random selection costs 34.38 and five-caption mean costs 35.80 (billions)
table = flops_table(reference_cost_model())
print(format_table([{"strategy": k, "flops": v} for k, v in table.items()], ("strategy", "flops"))[0])

# %%
# replicating every pair costs M times a single pair when the per-pair costs are equal
cost = CostModel(image=1.0, text_per_token=0.02, projection=0.01, weigher=0.0, num_captions=7, avg_caption_length=12)
t = flops_table(cost)
t["replication"] / t["random_selection"]
