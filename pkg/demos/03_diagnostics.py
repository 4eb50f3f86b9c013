"""
Checking the guarantees numerically
===================================

The default suite measures each instance's constants (operator norms,
stability moduli, feature bounds) and compares against the corresponding
bound. The negative controls break a hypothesis on purpose and are expected
to fail.
"""
from hodgeflow.diagnostics import default_suite, format_table, negative_control_suite

reports = default_suite(seed=0) + negative_control_suite(seed=0)
print(format_table(reports))
print()
for r in reports:
    key = next(iter(r.measured))
    print(f"{r.name:<26} {key} = {r.measured[key]}")
