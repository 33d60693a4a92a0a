"""Synthetic tool-tissue interaction episodes with ground-truth forces."""
