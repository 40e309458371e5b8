"""Detection augmented learning (DAL) for non-stationary bandits."""
