import functools


def trace_calls(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        result = fn(*args, **kwargs)
        print(f"{fn.__name__}{args} -> {result}")
        return result
    return wrapper


@trace_calls
def add(a, b=1):
    return a + b


@functools.lru_cache(maxsize=None)
def slow_fib(n):
    return n if n < 2 else slow_fib(n - 1) + slow_fib(n - 2)


add(2)
add(2, b=5)
print(slow_fib(60), add.__name__, add.__wrapped__.__name__)
