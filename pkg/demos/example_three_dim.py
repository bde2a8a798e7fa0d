"""Full run of the three-dimensional example; writes example_report.json here (about a minute)."""

import sys

from partlin.verify import ExampleSpec, report_json, run_example_50

spec = ExampleSpec(alpha=float(sys.argv[1]) if len(sys.argv) > 1 else 0.01,
                   sigma=float(sys.argv[2]) if len(sys.argv) > 2 else 0.01)
report, chain = run_example_50(spec)
for iv in report["spectrum"]["intervals"]:
    print(f"interval [{iv['lo']:.6f}, {iv['hi']:.6f}]")
for st in report["chain"]["stages"]:
    print(f"stage {st['kind']}(l={st['l']}) T={st['T']:.2f} {st.get('skipped', 'built')}")
print(f"residual {report['residual']['max_residual']:.2e}, fault {report['fault']['max_residual']:.2e}")
with open("example_report.json", "w") as fh:
    fh.write(report_json(report) + "\n")
