# Generates crates/core/tests/data/infonce_oracle.json: exact InfoNCE values at 50 digits.
import json, random, math
from mpmath import mp, mpf, exp, log
mp.dps = 50
rng = random.Random(20240501)
cases = []
for i in range(1000):
    n = rng.randint(0, 16)
    tau = 10 ** rng.uniform(-2, 0)
    pos = rng.uniform(-1, 1)
    neg = [rng.uniform(-1, 1) for _ in range(n)]
    if i % 10 == 0 and n:
        neg[0] = pos  # exact tie
    t = mpf(tau)
    num = exp(mpf(pos) / t)
    den = num + sum(exp(mpf(s) / t) for s in neg)
    loss = -log(num / den)
    cases.append({"positive": pos, "negatives": neg, "tau": tau, "loss": float(loss)})
json.dump({"generator": "mpmath dps=50, -ln(e^(s+/t) / (e^(s+/t) + sum e^(s-/t)))", "cases": cases},
          open(__file__.replace(".py", ".json"), "w"), indent=None)
print(len(cases), min(c["loss"] for c in cases), max(c["loss"] for c in cases))
