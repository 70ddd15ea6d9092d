"""Estimators, harnesses and CSV/CLI plumbing behind the targeted_factors facade."""
