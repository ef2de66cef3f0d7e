total = 0


def add(n):
    acc = 0
    acc += n
    return acc + total
