"""4D aircraft trajectory prediction from flight plans and gridded weather."""

__version__ = "0.1.0"
