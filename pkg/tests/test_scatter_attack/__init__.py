"""Tests for the scatter_attack package."""
