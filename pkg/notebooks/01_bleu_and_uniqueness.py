"""
Scoring redundant captions
==========================

Five captions of the same airport scene, two of which differ by one word.
BLEU-4 against the siblings says how much each caption repeats the others,
and one minus that is its uniqueness.
"""

# %%
import numpy as np

from capagg import tokenize, bleu4
from capagg.textproc import uniqueness_scores
from capagg.aggregation import uniqueness_weights

captions = [
    "Four airplanes are parked at the airport.",
    "There are some buildings and green trees around the airport.",
    "Many kinds of planes are parked near the terminal buildings.",
    "Many sizes of planes are parked near the terminal buildings.",
    "Four planes are parked at an airport with some buildings.",
]
tokens = [tokenize(c) for c in captions]
tokens[0]

# %%
# captions 3 and 4 swap "kinds" for "sizes", so most of their 4-grams still match
bleu4(tokens[2], [tokens[3]])

# %%
# clipping: "the the the" only gets credit for as many "the"s as a reference has
bleu4(tokenize("the the the the cat"), [tokenize("the cat sat on the mat")])

# %%
uni = np.array(uniqueness_scores(tokens))
uni.round(3)

# %%
# weights are a plain softmax of the scores, so they stay within a factor e of each other
w = uniqueness_weights(captions)
print(w.round(4), w.sum())
print("max/min ratio:", w.max() / w.min())

# %%
# five copies of one caption: nothing is unique, the weights fall back to the mean
uniqueness_weights([captions[0]] * 5)
