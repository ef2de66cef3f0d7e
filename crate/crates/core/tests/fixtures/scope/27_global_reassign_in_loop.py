best = None
for candidate in [3, 1, 2]:
    if best is None or candidate < best:
        best = candidate
