"""Plot the figure CSVs written by `ddehb export`.

    python docs/examples/plot_figures.py out/kotani_fig1
"""

import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd


def load(path):
    return pd.read_csv(path, comment="#")


def main(run_dir):
    run = Path(run_dir)
    panels = [
        ("figure_orbit.csv", "orbit"),
        ("figure_z.csv", "phase response z"),
        ("figure_eigenfunction_1.csv", "Floquet eigenfunction"),
        ("figure_q.csv", "amplitude response q"),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, (name, title) in zip(axes.flat, panels):
        path = run / name
        if not path.exists():
            ax.set_visible(False)
            continue
        df = load(path)
        for col in df.columns[1:]:
            ax.plot(df["phase"], df[col], label=col)
        ax.set_title(title)
        ax.legend(fontsize=8)
    for ax in axes[-1]:
        ax.set_xlabel("phase")
    fig.tight_layout()
    out = run / "figures.png"
    fig.savefig(out, dpi=150)
    print(out)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "out/kotani_fig1")
