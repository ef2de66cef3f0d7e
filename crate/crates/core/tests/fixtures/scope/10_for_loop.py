results = []
for index in range(5):
    results.append(index)


def tally(rows):
    for row in rows:
        results.append(row)
    return len(results)
