"""Real-time coordinated balancing-market dispatch."""
