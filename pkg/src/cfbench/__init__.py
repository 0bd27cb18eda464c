"""Car-following target-variable benchmark."""
__version__ = "0.1.0"
