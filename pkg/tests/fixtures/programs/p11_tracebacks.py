import traceback


def inner(x):
    return 10 // x


def outer(x):
    return inner(x)


try:
    outer(0)
except ZeroDivisionError:
    tb = traceback.extract_tb(__import__("sys").exc_info()[2])
    print([(f.name, f.lineno, f.line) for f in tb])
