#!/usr/bin/env python3
"""Synthesize a camera set, cluster it with either pipeline and print metrics."""
import argparse
import time

from spnclust import AdmmConfig, LsConfig, SynthCameraSet, evaluate, ls_ssc, ssc_nc, synthesize


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mode", choices=("ssc-nc", "ls-ssc"), default="ssc-nc")
    ap.add_argument("--cameras", type=int, default=5)
    ap.add_argument("--images", type=int, default=100)
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--theta-variance", type=float, default=0.01)
    ap.add_argument("--gamma", type=float, default=0.02)
    ap.add_argument("--batch-size", type=int, default=250)
    ap.add_argument("--recycle", type=int)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    fm, labels = synthesize(SynthCameraSet(args.cameras, args.images, d=args.side ** 2,
                                           theta_variance=args.theta_variance, rng_seed=args.seed))
    t1 = time.perf_counter()
    admm = AdmmConfig(gamma=args.gamma)
    if args.mode == "ssc-nc":
        result = ssc_nc(fm, admm, seed=args.seed)
        extra = ""
    else:
        res = ls_ssc(fm, LsConfig(admm=admm, batch_size=args.batch_size, recycle_steps=args.recycle),
                     seed=args.seed)
        result = res.result
        extra = f"batches={res.num_batches} recycle={res.recycle_steps} peak_resident={res.peak_resident}\n"
    t2 = time.perf_counter()
    print(f"n={fm.n} d={fm.d} synth_s={t1 - t0:.2f} cluster_s={t2 - t1:.2f}")
    print(extra + evaluate(result, labels).to_text())


if __name__ == "__main__":
    main()
