import sys

sys.setrecursionlimit(200)


def deep(n):
    return deep(n + 1)


try:
    deep(0)
except RecursionError:
    print("recursion caught")


def fact(n):
    return 1 if n <= 1 else n * fact(n - 1)

print(fact(20))
