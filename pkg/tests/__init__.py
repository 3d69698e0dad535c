"""Tests for scmc package."""
