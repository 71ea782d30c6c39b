"""Model components, data handling and experiment services."""
