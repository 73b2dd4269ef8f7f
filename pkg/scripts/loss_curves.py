"""Print a benchmark's loss_curves.csv as an epoch-by-strategy text table."""
import sys

from rntforge.evalharness import read_loss_curves


def main(path):
    curves = read_loss_curves(path)
    width = max(len(name) for name in curves)
    epochs = max(len(v) for v in curves.values())
    print(" " * width + "".join(f"{'ep' + str(e):>9}" for e in range(1, epochs + 1)))
    for name, losses in curves.items():
        print(f"{name:<{width}}" + "".join(f"{x:9.3f}" for x in losses))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "runs/benchmark/loss_curves.csv")
