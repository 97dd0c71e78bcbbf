"""Monte Carlo estimate of the mean return of a uniformly random policy on
the cart-pole used by the toolkit (Euler steps, no cart bound, |theta| >
12 degrees ends the episode, every step taken scores 1, horizon 200).

Written from the equations, independently of the Rust code; the printed
mean is frozen as a test fixture.
"""
import math
import random
import sys

G, M_CART, M_POLE, HALF, FORCE, DT = 9.8, 1.0, 0.1, 0.5, 10.0, 0.02
THETA_MAX = 12 * 2 * math.pi / 360
HORIZON = 200


def episode(rng):
    x, x_dot, th, th_dot = (rng.uniform(-0.05, 0.05) for _ in range(4))
    total = M_CART + M_POLE
    ml = M_POLE * HALF
    for t in range(1, HORIZON + 1):
        f = FORCE if rng.random() < 0.5 else -FORCE
        s, c = math.sin(th), math.cos(th)
        temp = (f + ml * th_dot * th_dot * s) / total
        th_acc = (G * s - c * temp) / (HALF * (4.0 / 3.0 - M_POLE * c * c / total))
        x_acc = temp - ml * th_acc * c / total
        x, x_dot = x + DT * x_dot, x_dot + DT * x_acc
        th, th_dot = th + DT * th_dot, th_dot + DT * th_acc
        if abs(th) > THETA_MAX:
            return t
    return HORIZON


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 1_000_000
    rng = random.Random(20231019)
    returns = [episode(rng) for _ in range(n)]
    mean = sum(returns) / n
    var = sum((r - mean) ** 2 for r in returns) / (n - 1)
    print(f"episodes={n} mean={mean:.3f} sd={math.sqrt(var):.3f} se={math.sqrt(var / n):.4f}")


if __name__ == "__main__":
    main()
