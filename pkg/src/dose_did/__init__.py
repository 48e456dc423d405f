"""Difference-in-differences with a continuous or multi-valued treatment dose."""
