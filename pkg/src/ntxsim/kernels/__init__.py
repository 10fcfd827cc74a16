"""Training-kernel lowerings and their reference oracles."""
