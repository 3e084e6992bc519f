"""Pilot-aided simultaneous communication and localisation toolkit."""
