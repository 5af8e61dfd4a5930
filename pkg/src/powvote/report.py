"""Figure rendering next to the delimited outputs.

The sweep figure mirrors the evaluation layout: one facet per race
advantage, attacker hashrate on the x-axis, normalized revenue on the y,
one curve per protocol and policy, with the honest line y = x and the
sequential bound y = x / (1 - x) as references.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_COLORS = {"sequential": "tab:blue", "parallel": "tab:red",
           "tree": "tab:green", "dag": "tab:purple"}
_STYLES = {"honest": ":", "sm1": "--", "learned": "-", "qtable": "-."}


def sweep_figure(rows, path: str) -> None:
    gammas = sorted({r.gamma for r in rows})
    fig, axes = plt.subplots(1, len(gammas), figsize=(4.2 * len(gammas), 3.6),
                             sharey=True, squeeze=False)
    for ax, gamma in zip(axes[0], gammas):
        facet = [r for r in rows if r.gamma == gamma]
        alphas = sorted({r.alpha for r in facet})
        ax.plot(alphas, alphas, color="black", ls="--", lw=0.8, label="honest $y=x$")
        ax.plot(alphas, [a / (1 - a) for a in alphas], color="black", ls=":",
                lw=0.8, label="$y=x/(1-x)$")
        for proto in sorted({r.protocol for r in facet}):
            for policy in sorted({r.policy for r in facet if r.protocol == proto}):
                pts = sorted((r.alpha, r.mean) for r in facet
                             if r.protocol == proto and r.policy == policy)
                ax.plot([p[0] for p in pts], [p[1] for p in pts],
                        color=_COLORS.get(proto, "gray"),
                        ls=_STYLES.get(policy, "-"),
                        marker="o", ms=3, label=f"{proto}/{policy}")
        ax.set_title(f"$\\gamma = {gamma:g}$")
        ax.set_xlabel("attacker hashrate $\\alpha$")
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("normalized revenue")
    handles, labels = axes[0][-1].get_legend_handles_labels()
    fig.legend(handles, labels, loc="upper center", ncol=4, fontsize=7,
               bbox_to_anchor=(0.5, 1.14))
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def fairness_figure(rows, path: str) -> None:
    protocols = sorted({r[0] for r in rows})
    fig, axes = plt.subplots(1, len(protocols), figsize=(3.6 * len(protocols), 3.2),
                             sharey=True, squeeze=False)
    for ax, proto in zip(axes[0], protocols):
        facet = [r for r in rows if r[0] == proto]
        nodes = [r[3] for r in facet]
        ratios = [r[5] / r[4] if r[4] else 0.0 for r in facet]
        ax.bar(nodes, ratios, color="tab:blue")
        ax.axhline(1.0, color="black", lw=0.8, ls="--")
        ax.set_title(proto)
        ax.set_xlabel("miner")
    axes[0][0].set_ylabel("reward share / hashrate")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
