"""Quantity and unit-of-measure extraction for product text.

The pipeline reads product records (title, description, bullet points, OCR
text plus a category path), predicts the unit-of-measure type with a
character-level CNN, then extracts the numeric spans that multiply out to
the purchasable total quantity with a span-image extractor conditioned on
that prediction. Weak labeling, a rule-based baseline, synthetic data
generation, training, evaluation and a CLI live in the submodules.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
