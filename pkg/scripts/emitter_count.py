"""g2(0) of p merged emitters and the emitter count inferred from it.

    python scripts/emitter_count.py --max-p 4 --time-s 600
"""
import argparse
import dataclasses

from antibunch import config as C
from antibunch.inference import estimate_emitter_count
from antibunch.pipeline import analyze_point


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-p", type=int, default=4)
    ap.add_argument("--time-s", type=float, default=600.0)
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    base = C.nanocrystal().replace(powers_mw=(2.7,), acquisition_time_s=args.time_s,
                                   histogram=C.HistogramConfig(1.0, (-300.5, 300.5)))
    print(f"{'p':>3} {'1-1/p':>7} {'g2(0) fit':>10} {'err':>7} {'estimate':>9}")
    for p in range(1, args.max_p + 1):
        cfg = base.replace(emitter=dataclasses.replace(base.emitter, count=p), seed=base.seed + p)
        s = analyze_point(cfg, 0, args.workers, fixed=("baseline",)).summary()
        g0 = s.get("g2_fit_zero")
        if g0 is None:
            print(f"{p:>3} fit failed")
            continue
        est = estimate_emitter_count(min(max(g0, 0.0), 0.999))
        flag = "?" if est.ambiguous else ""
        print(f"{p:>3} {1 - 1 / p:7.3f} {g0:10.4f} {s['g2_fit_zero_err']:7.4f} {est.p_rounded:>8}{flag}")


if __name__ == "__main__":
    main()
