"""Decision-validity audits for proxy judges used in best-of-n selection."""

__version__ = "0.1.0"
