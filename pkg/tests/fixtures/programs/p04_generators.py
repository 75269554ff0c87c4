def fib():
    a, b = 0, 1
    while True:
        yield a
        a, b = b, a + b


def running_mean():
    total = count = 0
    mean = None
    while True:
        x = yield mean
        total += x
        count += 1
        mean = total / count


def log(msg):
    print(msg)


def guarded():
    try:
        while True:
            yield 1
    finally:
        log("guarded closed")


g = fib()
left_open = guarded()
next(left_open)  # closed at interpreter shutdown
print([next(g) for _ in range(10)])
m = running_mean()
next(m)
print([m.send(v) for v in (2, 4, 9)])
m.close()
try:
    fib().throw(KeyError("k"))
except KeyError as e:
    print("thrown", e)
