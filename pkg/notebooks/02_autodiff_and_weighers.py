"""
Gradients, weighers and aggregation
===================================

The training graph runs on a small float64 reverse-mode engine. Here it is
checked against finite differences, then used to turn per-caption feature
vectors into one text vector per image.
"""

# %%
import numpy as np

from capagg.numerics import Tensor, backward, grad_check
from capagg.numerics import ops as T
from capagg.model import AttentionWeigher, LinearWeigher
from capagg import aggregation as agg

x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
loss = T.sum(T.tanh(x) * x)
backward(loss)
x.grad, np.tanh(x.data) + x.data / np.cosh(x.data) ** 2

# %%
rng = np.random.default_rng(0)
features = Tensor(rng.standard_normal((5, 16)))  # five captions, 16-dim text features
att = AttentionWeigher(16, rng)
lin = LinearWeigher(16, rng)

w_att = agg.attention_weights(features, att)
w_lin = agg.lgwf_weights(features, lin)
# tanh keeps the attention pseudo-weights in [-1, 1]; the linear map is unbounded
w_att.data.round(3), w_lin.data.round(3)

# %%
# central differences against the analytic gradient of every weigher parameter
probe = Tensor(rng.standard_normal(16))
err = grad_check(lambda: T.sum(agg.aggregate_weighted(features, agg.attention_weights(features, att)) * probe),
                 att.parameters())
print("max relative error:", err)

# %%
# several images at once: caption rows are tagged with their image, softmax runs per image
segments = np.array([0, 0, 1, 1, 1])
w = agg.learned_weights(features, att, segments)
H = agg.aggregate_segments(features, w, segments, 2)
w.data.round(3), H.shape

# %%
# identical captions get bitwise identical weights, so the aggregate equals the plain mean
same = Tensor(np.tile(rng.standard_normal(16), (4, 1)))
np.array_equal(agg.aggregate_weighted(same, agg.attention_weights(same, att)).data,
               agg.aggregate_weighted(same, agg.uniform_weights(4)).data)
