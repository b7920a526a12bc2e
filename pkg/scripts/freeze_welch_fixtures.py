"""Write tests/data/welch_fixtures.json from scipy.stats.ttest_ind (oracle only;
scipy is not a dependency of the package)."""
import json
from pathlib import Path

import numpy as np
import scipy.stats as st

rng = np.random.default_rng(2024)
samples = [
    (rng.normal(0, 1, 12), rng.normal(0.5, 2, 9)),
    (rng.normal(10, 3, 30), rng.normal(10.2, 3, 25)),
    (rng.exponential(2, 6), rng.exponential(5, 7)),
    (rng.normal(0, 1, 2), rng.normal(3, 1, 3)),
    (rng.normal(8, 2, 103), rng.normal(6.5, 1.5, 86)),
]
out = []
for a, b in samples:
    a, b = a.round(3), b.round(3)
    welch = st.ttest_ind(a, b, equal_var=False)
    student = st.ttest_ind(a, b, equal_var=True)
    out.append({"a": a.tolist(), "b": b.tolist(), "welch_t": float(welch.statistic),
                "welch_p": float(welch.pvalue), "student_t": float(student.statistic),
                "student_p": float(student.pvalue)})
path = Path(__file__).resolve().parents[1] / "tests" / "data" / "welch_fixtures.json"
path.write_text(json.dumps(out, indent=1) + "\n")
print(f"wrote {len(out)} fixtures to {path}")
