"""Synthetic thoracic-aortic-aneurysm laboratory.

Generates heterogeneous mechanobiological insult fields, forward-solves a
reduced equilibrated growth-and-remodeling wall model into dilatation and
distensibility maps, and trains/evaluates operator-learning models that
invert those maps back to the initiating insult contributions.
"""

__version__ = "0.1.0"
