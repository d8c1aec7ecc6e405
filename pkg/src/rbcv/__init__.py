"""Reduced-basis control variates for parameter-dependent expectations.

Offline, a greedy loop selects snapshot parameters whose functions span
the family well in the empirical L2 sense; online, each query fits a
small linear combination of snapshots as a control variate and corrects
its mean with a precomputed reference-batch average.
"""

__version__ = "0.1.0"
