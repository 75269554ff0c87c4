def add(a, b):
    return a + b

add(10, 20)
add("foo", "bar")
