"""Compare analytic gradients against central finite differences.

Run: python3 demos/gradient_check.py
Same check as `lgmsv gradcheck`; the second run sabotages one group on purpose.
"""
from lgmsv.gradcheck import run_gradcheck

report = run_gradcheck(seed=0, cases=100)
print("\n".join(report.lines()))

# a deliberately wrong gradient must be caught
bad = run_gradcheck(seed=0, cases=5, encoder_cases=0, corrupt="lgm.log_variances")
print(bad.lines()[-1])
