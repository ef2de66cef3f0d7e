value = 10


def shadow(value):
    return value + 1


def reads():
    return value
