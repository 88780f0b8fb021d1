"""Detection and analysis of triangular bitcoin/fiat arbitrage in exchange trade ledgers."""

__version__ = "0.1.0"
