"""End-to-end run of the three measured data sets with a pass/fail table.

Equivalent to ``mollow reproduce --out <dir>``: for each set the spectra,
filter, photon stream, four correlation histograms and the chained fits are
written under ``<dir>/set_<name>/`` and every derived quantity is compared
with its reference value.

    python3 demos/reproduce_data_sets.py [output_dir]
"""
import sys
import tempfile
from pathlib import Path

from mollow.pipeline import load_config, reproduce

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="mollow_"))
report = reproduce(load_config(output_dir=out))
print(report.table())
print(f"\n{'all checks passed' if report.passed else 'some checks FAILED'}; files in {out}")
