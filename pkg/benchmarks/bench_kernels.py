"""Compare the numba and numpy paths of the network kernels.

    python3 benchmarks/bench_kernels.py [--m 4096] [--n 50] [--repeat 5]

The last row times the full oracle (gradient descent on the ridge loss), which
is the inner loop of every NOVI backward sweep.
"""
import argparse
import timeit

import numpy as np

from ovilab import _accel, _kernels
from ovilab.kernels import sphere_normalize
from ovilab.novi import OracleConfig, init_symmetric, minimize_loss


def _best(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--m", type=int, default=4096)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--activation", default="quadratic")
    args = p.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is unavailable (or disabled by OVILAB_DISABLE_NUMBA)")

    rng = np.random.default_rng(0)
    net = init_symmetric(args.m, args.d, 0, args.activation)
    W, b, phase, amp, act_id, s = net.args(net.W0 + 0.05 * rng.standard_normal(net.W0.shape))
    Z = sphere_normalize(rng.standard_normal((args.n, args.d)))
    y = rng.uniform(0, 2, size=args.n)
    cases = {
        "forward": lambda f: f(W, b, phase, amp, act_id, s, Z),
        "tangent": lambda f: f(W, b, phase, amp, act_id, s, Z),
        "loss_grad": lambda f: f(W, net.W0, b, phase, amp, act_id, s, Z, y, 1.0),
        "tangent_gram": lambda f: f(W, b, phase, amp, act_id, s, Z, Z),
    }
    print(f"m={args.m} d={args.d} n={args.n} activation={args.activation}")
    print(f"{'kernel':<14}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, call in cases.items():
        t_np = _best(lambda: call(getattr(_kernels, name + "_np")), args.repeat)
        t_nb = _best(lambda: call(getattr(_kernels, name + "_nb")), args.repeat)
        print(f"{name:<14}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}")

    cfg = OracleConfig(step="auto", method="nesterov", max_iter=200, tol=1e-12)
    times = {}
    for flag in (False, True):
        _accel.USE_NUMBA = flag
        times[flag] = _best(lambda: minimize_loss(net, Z, y, 1.0, cfg), max(1, args.repeat // 2))
    _accel.USE_NUMBA = _accel.HAVE_NUMBA
    print(f"{'oracle x200':<14}{1e3 * times[False]:>12.1f}{1e3 * times[True]:>12.1f}"
          f"{times[False] / times[True]:>10.1f}")


if __name__ == "__main__":
    main()
