"""Monte Carlo simulator for looped consecutive measurements under standard
quantum mechanics and a super-deterministic hidden-variable model."""

__version__ = "0.1.0"
