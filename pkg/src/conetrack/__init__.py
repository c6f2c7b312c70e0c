"""conetrack: cone mapping and middle-path planning pipeline at desk scale."""

__version__ = "0.1.0"
