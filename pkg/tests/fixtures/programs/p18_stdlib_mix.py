import collections
import itertools
import json
import random


def histogram(words):
    return collections.Counter(words).most_common(3)


def chunks(xs, n):
    it = iter(xs)
    while chunk := list(itertools.islice(it, n)):
        yield chunk


rng = random.Random(7)
words = [rng.choice("abcde") for _ in range(50)]
print(histogram(words), list(chunks(range(7), 3)))
print(json.dumps({"k": sorted(set(words))}, sort_keys=True))
