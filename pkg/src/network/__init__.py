"""Deep Prior network and its low-rank adapters."""
