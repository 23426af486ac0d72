"""Reference external scorer for the evidencer wire protocol."""

__version__ = "0.1.0"
