#!/usr/bin/env python3
"""Exact squared first-column norm of the Toeplitz factor next to two closed forms.

``safe`` is 1 + (1 + ln(n-1)) / pi, which always holds.  ``closed-form`` is
1 + ln(4n/5) / pi, which the exact value exceeds; violations are flagged.
"""

import argparse

from ldpofl.mf_mechanism import toeplitz_norm_report


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+",
                   default=[2, 3, 4, 8, 16, 64, 256, 1000, 4000, 16000])
    args = p.parse_args()
    print(f"{'steps':>7} {'exact':>10} {'safe':>10} {'closed-form':>12}  flag")
    for row in toeplitz_norm_report(args.sizes):
        flag = "exceeds closed form" if row["published_violated"] else ""
        print(f"{row['steps']:>7} {row['exact']:>10.5f} {row['safe_bound']:>10.5f} "
              f"{row['published_bound']:>12.5f}  {flag}")


if __name__ == "__main__":
    main()
