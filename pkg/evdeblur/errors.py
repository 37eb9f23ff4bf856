""" Exception types raised across evdeblur.

Argument problems are plain ValueErrors (or the RangeError refinement), so callers can catch them generically.
"""


class RangeError(ValueError):
    """ Raised when an index, timestamp or window falls outside its valid range. """
    pass


class ParseError(ValueError):
    """ Raised for a malformed input file, carrying the location of the problem. """

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        if line is None:
            location = self.path
        else:
            location = '{}:{}'.format(self.path, line)
        super().__init__('{}: {}'.format(location, message))


class NumericalError(ArithmeticError):
    """ Raised when an optimisation produces a non-finite value. """

    def __init__(self, iteration, message):
        self.iteration = iteration
        super().__init__('iteration {}: {}'.format(iteration, message))
