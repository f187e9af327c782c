"""Settling time of isochronous VP-D against conventional full droop."""
from vpdroop.acceptance import comparison_settling

if __name__ == "__main__":
    (vpd, _), (full, sync) = comparison_settling()
    for name, times in (("VP-D", vpd), ("full droop", full)):
        print(name + ": " + ", ".join(f"{k}={v:.4g} s" for k, v in times.items()))
    if not sync:
        print("full droop run lost synchronism")
