"""affinelab: a simulation and verification lab for dynamics on the space of
affine lattices and its applications — elliptical billiards with barriers,
periodic Eaton lens arrays, and gap statistics of fractional parts of sqrt(n).
"""

__version__ = "0.1.0"
