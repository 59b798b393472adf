"""Regime identification and regime-aware asset allocation toolkit."""
