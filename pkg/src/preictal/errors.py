class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""
