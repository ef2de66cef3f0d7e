class Point:
    origin = None

    def norm(self):
        return self.x * self.x + self.y * self.y

    def shift(self, dx):
        self.x = self.x + dx
        return self
