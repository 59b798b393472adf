"""Tests for the regime_allocator package."""
