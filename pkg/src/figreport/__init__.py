"""Figure-grounded research reports: evidence gathering, image enrichment,
section-wise writing with routed figures, and rubric-based judging."""

__version__ = "0.1.0"
