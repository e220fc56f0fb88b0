#!/usr/bin/env python3
"""Run the fixed-seed teacher-forcing benchmark and print the comparison.

Optionally runs the perturbation suite on the trained model afterwards.
"""

import argparse
import time

from sgreason.benchmark import eval_records, run_benchmark
from sgreason.datagen import default_vocabulary
from sgreason.diagnosis import NeuralHandle, build_report
from sgreason.scene_graph import PerturbationSpec


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--perturb", action="store_true",
                        help="also run bg/fg/rand perturbations on the trained model")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    t0 = time.monotonic()
    vocab = default_vocabulary()
    before, after, trained = run_benchmark(vocab)
    print(f"questions: {after.num_questions}   elapsed: {time.monotonic() - t0:.1f}s")
    print(f"untrained: accuracy {before.accuracy:6.2f}   grounding AP {before.mean_ap:6.2f}")
    print(f"trained:   accuracy {after.accuracy:6.2f}   grounding AP {after.mean_ap:6.2f}")
    print(f"delta:     accuracy {after.accuracy - before.accuracy:+6.2f}   "
          f"grounding AP {after.mean_ap - before.mean_ap:+6.2f}")

    if args.perturb:
        specs = [
            PerturbationSpec("background_removal"),
            PerturbationSpec("foreground_removal"),
            PerturbationSpec("randomize", seed=5, noise_scale=5.0),
        ]
        report = build_report(
            eval_records(vocab), NeuralHandle(vocab, trained), specs, jobs=args.jobs
        )
        print("\nperturbation  acc-after   C->I    I->C")
        for label, row in sorted(report.robustness.items()):
            print(f"{label:12s}  {row['accuracy_after']:8.2f} {row['c_to_i']:7.2f} "
                  f"{row['i_to_c']:7.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
