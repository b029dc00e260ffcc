"""Glint shading under area lights with a binomial microfacet counting model."""

__version__ = "0.1.0"
