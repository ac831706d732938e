"""Tests for the Veraz package."""
