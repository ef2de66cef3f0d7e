def counter_factory():
    count = 0

    def step():
        nonlocal count
        count += 1
        return count

    return step


ticker = counter_factory()
