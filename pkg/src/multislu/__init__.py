"""Multiround slot-filling SLU engine.

A desk-scale system that parses a flight-booking query into a slot table and
then refines that table over successive rounds of user feedback.  A recurrent
mask policy decides which slot candidates to keep each round, and a learned
reward function (trained adversarially against human demonstrations) scores
the masked candidates.  Everything runs on a small float64 tensor kernel with
reverse-mode gradients so every component is finite-difference checkable.
"""

__version__ = "0.1.0"
