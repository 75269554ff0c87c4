def square(x):
    return x * x

print([square(i) for i in range(5)], square(2.5), square(3j))
