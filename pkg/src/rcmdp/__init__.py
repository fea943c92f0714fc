"""Finite-horizon MDPs with a nested-risk constraint, solved on the (state, threshold) space."""
