class Positive:
    def __set_name__(self, owner, name):
        self.name = "_" + name

    def __get__(self, obj, objtype=None):
        return getattr(obj, self.name)

    def __set__(self, obj, value):
        if value <= 0:
            raise ValueError("must be positive")
        setattr(obj, self.name, value)


class Account:
    balance = Positive()
    __slots__ = ("_balance",)

    def __init__(self, balance):
        self.balance = balance

    @property
    def doubled(self):
        return self.balance * 2


a = Account(5)
print(a.balance, a.doubled)
try:
    a.balance = -1
except ValueError as e:
    print(e)
