def describe(value):
    match value:
        case {"kind": "circle", "r": r}:
            return f"circle {r}"
        case [x, y]:
            return f"pair {x} {y}"
        case int(n) if (half := n // 2) > 1:
            return f"int half {half}"
        case _:
            return "other"


print([describe(v) for v in ({"kind": "circle", "r": 2}, [1, 2], 10, 1, "s")])
