"""DC-link pre-charge from several initial voltages, as an SVG.

    python scripts/precharge_curves.py [out.svg]
"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from btbsim.btb import BtbConverter, precharge  # noqa: E402

FRACTIONS = (0.25, 0.5, 0.75, 0.9)


def main(out="precharge.svg"):
    plt.rcParams["svg.hashsalt"] = "btbsim"
    fig, ax = plt.subplots(figsize=(7, 4))
    for frac in FRACTIONS:
        conv = BtbConverter("btb", "a", "b")
        res = precharge(conv, frac * conv.dc.vdc_nominal)
        ax.plot(res.time, res.vdc, label=f"Vdc0 = {frac:g} pu (enable {res.enable_time:.3f} s)")
    ax.axhline(8000.0, color="k", lw=0.6, ls="--")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("Vdc [V]")
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, metadata={"Date": None})
    print(out)


if __name__ == "__main__":
    main(*sys.argv[1:2])
