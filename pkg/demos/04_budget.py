"""Demo: exact parameter budgets and the full-scale efficiency ratios.

Run: python3 demos/04_budget.py
"""

from adapterlab.budget import paper_scale_report

rep = paper_scale_report()

print(f"{'component':<12}{'parameters':>14}{'MB':>10}{'% of model':>12}")
for name, count in rep.counts.items():
    print(f"{name:<12}{count:>14,}{rep.megabytes[name]:>10.2f}"
          f"{rep.percent_of_model[name]:>12.2f}")

print("\nparameter-efficiency ratios (full-scale reference budgets):")
for name, value in rep.ratios.items():
    print(f"  {name:<24}{value:>8.2f}x")

for note in rep.notes:
    print(f"note: {note}")
