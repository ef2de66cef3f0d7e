RATE = 0.5
counter = 0
names = ["a", "b"]


def bump(step):
    total = counter + step
    return total * RATE
