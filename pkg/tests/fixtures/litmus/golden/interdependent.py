def add[T1: (int, str)](a: T1, b: T1) -> T1:
    return a + b

add(10, 20)
add("foo", "bar")
