"""Conditions and constants for two reference dictionaries.

An orthonormal basis satisfies every condition for small k and has C_min = 0,
so the admissible radius interval starts at zero. A Dirac plus cosine pair is
overcomplete: its large Gram residual makes C_min exceed C_max, the flatness
condition fails and no radius is certified, although the pair is very
incoherent. The conditions are sufficient, not necessary.
"""

from dictident import CoefficientModel, SignedUniform, onb_pair, orthonormal, theorem_report

model_o = CoefficientModel(128, 2, SignedUniform(1.0, 2.0))
model_p = CoefficientModel(256, 1, SignedUniform(1.0, 2.0))

for name, D0, model, lam in [("orthonormal 128", orthonormal(128), model_o, 0.25),
                             ("dirac+dct 128", onb_pair(128), model_p, 0.02)]:
    rep = theorem_report(D0, model, lam)
    lo, hi = rep.radius_interval
    print(f"== {name}: all conditions hold: {rep.all_satisfied}")
    for c in rep.conditions:
        print(f"   {c.name:22s} {c.lhs:10.4g} {c.relation:2s} {c.rhs:10.4g}  {'ok' if c.satisfied else 'FAILS'}")
    print(f"   C_min={rep.constants['C_min']:.4g}  C_max={rep.constants['C_max']:.4g}  radii in ({lo:.4g}, {hi:.4g})")
    if rep.finite_sample and rep.finite_sample.get("n_required"):
        print(f"   signals sufficient at r={rep.finite_sample['r']:.4g}: {rep.finite_sample['n_required']:.3e}")
