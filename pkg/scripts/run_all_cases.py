"""Run every built-in case, write records under OUT/<case>/ and plot the headline channels.

    python scripts/run_all_cases.py [OUT]
"""
import sys
import time

from btbsim.cli import main

GROUPS = ["f_MG0,f_MG1", "P_BTB", "Vdc_pu", "bess0.P,dg0.P,pv0.P", "bess1.P,bess1.Q,pv1.P"]


def run(out="out"):
    t0 = time.perf_counter()
    code = main(["run", "--all-cases", "--out", out])
    if code:
        return code
    for name in ("flexible_exchange", "dynamic_decoupling", "black_start"):
        args = ["plot", f"{out}/{name}/record.csv", "--out", f"{out}/{name}/plots"]
        for g in GROUPS:
            args += ["--channels", g]
        if name == "flexible_exchange":
            args += ["--guide", "0.94", "--guide", "1.068"]
        code = main(args)
        if code:
            return code
    print(f"done in {time.perf_counter() - t0:.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(run(*sys.argv[1:2]))
