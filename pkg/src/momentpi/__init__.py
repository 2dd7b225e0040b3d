"""Moment dynamics and positive PI control of a stochastic gene-expression circuit."""

__version__ = "0.1.0"
