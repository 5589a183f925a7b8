"""Smoke test for the chanprune extension module.

Build and install first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/chanprune-*.whl
"""

import chanprune as cp


def main():
    t2 = cp.Architecture.load("t2")
    assert t2.cost([2, 8]) == (12672, 198)
    assert t2.rates([2, 8]) == (0.5, 0.5)

    vgg = cp.Architecture.load("vgg16-cifar")
    space = cp.Space(vgg, rf=0.5, rp=0.5)
    print("vgg16-cifar space size:", space.size)

    v = space.rescale([10_000] * len(vgg), seed=0)
    assert space.is_feasible(v)

    out = cp.run_search(space, iterations=50, seed=0)
    rf, rp = out["rates"]
    assert rf >= 0.5 and rp >= 0.5
    print("best", out["best"], "fitness %.4f" % out["fitness"], "r_f %.3f r_p %.3f" % (rf, rp))

    assert cp.sphere([5] * 30) == 0.0
    summary = cp.run_benchmark(seeds=[0, 1], iterations=20)
    for row in summary:
        print(row["mode"], "successes", row["successes"], "mean best %.2f" % row["mean_best_fitness"])
    print("ok")


if __name__ == "__main__":
    main()
