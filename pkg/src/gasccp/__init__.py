"""Data-driven warm-started convex-concave procedure for optimal gas flow."""
