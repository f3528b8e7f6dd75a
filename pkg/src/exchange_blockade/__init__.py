"""Exchange-blockade sqrt(SWAP) gate for two fermionic atoms in a merging double well."""

__version__ = "0.1.0"
