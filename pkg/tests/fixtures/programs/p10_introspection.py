import inspect
import sys


def target(a, b: int = 2, *rest, key=None, **extra) -> str:
    frame = sys._getframe()
    return ",".join(sorted(frame.f_locals))


print(inspect.signature(target))
print(target(1), target(1, 2, 3, key=4, z=5))
print(target.__code__.co_argcount, target.__code__.co_kwonlyargcount, target.__code__.co_varnames[:6])
print(inspect.getsource(target).splitlines()[0])
