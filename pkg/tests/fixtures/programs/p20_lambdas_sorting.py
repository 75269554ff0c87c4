import operator


def rank(people):
    return sorted(people, key=lambda p: (-p[1], p[0]))


def apply_all(fns, value):
    return [f(value) for f in fns]


people = [("ann", 3), ("bob", 5), ("cid", 3)]
print(rank(people), apply_all([abs, str, operator.neg, lambda v: v * 2], -4))
print(list(map(lambda kv: kv[0], filter(lambda kv: kv[1] > 3, people))))
raise LookupError("done")
