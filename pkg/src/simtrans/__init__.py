"""Desk-scale neural machine translation toolkit for similar-language pairs."""

__version__ = "0.1.0"
