class Outer:
    class Inner:
        depth = 1

    def make(self):
        return Outer.Inner()


tree = Outer()
