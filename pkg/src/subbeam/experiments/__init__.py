"""Experiment scenarios: end-to-end links, imaging, localization, mobility."""
