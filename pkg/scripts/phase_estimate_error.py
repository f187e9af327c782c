"""Relative error of the small-deviation phase estimate against the exact formula."""
from vpdroop.acceptance import corollary_error, exact_phase_error

if __name__ == "__main__":
    print(f"exact formula max error: {exact_phase_error():.2e} rad")
    worst, used = corollary_error()
    print(f"small-deviation estimate max relative error: {worst:.3g} over {used} configurations")
