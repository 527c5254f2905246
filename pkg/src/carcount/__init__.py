"""Car classification, detection and one-look counting in overhead imagery."""
