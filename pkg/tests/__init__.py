"""Tests for targeted_factors."""
