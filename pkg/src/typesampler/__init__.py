"""Dynamic type inference from sampled call traces."""
