"""Contact-schedule learning for a planar single-leg hopper.

A contextual Gaussian-process bandit picks the phase schedule; a direct
collocation NLP scores it.
"""

__version__ = "0.1.0"
