"""Unit conventions used throughout.

Time is measured in minutes from the session open, volumes in shares,
prices in currency. Cost rates are quoted in basis points of the
arrival price; BPS converts a bps figure to a plain fraction.
"""

BPS = 1e-4
