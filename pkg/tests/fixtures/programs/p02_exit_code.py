import sys


def check(values):
    return all(v > 0 for v in values)

print(check([1, 2, 3]))
sys.exit(0 if check([1, -1]) else 4)
