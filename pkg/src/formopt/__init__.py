"""Optimizing compiler for finite element reference-tensor contractions."""

__version__ = "0.1.0"
