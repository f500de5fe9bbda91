"""Per-component parameter counts of the default student and teacher."""
from eegmobile.models import analytic_param_count

REFERENCE = {"student": 55.9e6, "teacher": 137.2e6}

for arch in ("student", "teacher"):
    counts = analytic_param_count(arch)
    print(arch)
    for k, v in counts.items():
        print(f"  {k:<20s}{v:>14,d}")
    print(f"  vs reference {REFERENCE[arch] / 1e6:.1f} M: {100 * (counts['total'] / REFERENCE[arch] - 1):+.2f}%")
