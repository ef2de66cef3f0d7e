data = [1, 2, 3]
squares = [item * item for item in data]
lookup = {key: key + 1 for key in data if key > 1}
