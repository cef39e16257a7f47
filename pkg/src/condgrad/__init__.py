"""Frank-Wolfe networks: projection-free optimization over the unit simplex
and the trace-norm ball, with learned step sizes and directions."""
__version__ = "0.1.0"
