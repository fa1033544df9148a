"""Control and pursuit on truncated block-diagonal systems in l2."""
