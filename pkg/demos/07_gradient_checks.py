"""Finite-difference verification of every hand-written backward pass.

Each suite perturbs inputs (and sampled parameters) of one operator,
compares central differences against the analytic gradients, and
reports the worst relative error. The end-to-end suite runs the full
recurrent network over three frames in float64, which exercises
backpropagation through time, the warping gradient stop, and the
upsample chain all at once. The same suites back the `gradcheck` CLI
subcommand.
"""

import time

from motiondepth.gradcheck import SUITES, run_suites


def main():
    print(f"{len(SUITES)} suites: {', '.join(sorted(SUITES))}\n")
    t0 = time.perf_counter()
    results = run_suites()
    elapsed = time.perf_counter() - t0

    width = max(len(name) for name, _, _, _ in results)
    for name, err, bound, passed in results:
        mark = "ok" if passed else "FAIL"
        print(f"  {name:<{width}}  max rel err {err:.3e}  (bound {bound:.0e})  {mark}")

    all_ok = all(passed for _, _, _, passed in results)
    print(f"\nall suites passed: {all_ok}  ({elapsed:.2f} s)")


if __name__ == "__main__":
    main()
