"""Training, evaluation and inference around the separation networks."""
