"""Customer-base analysis: probabilistic customer lifetime value models."""
