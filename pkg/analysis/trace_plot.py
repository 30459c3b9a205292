#!/usr/bin/env python3
"""Static figures: a detector trace around a seizure, and per-fold latency /
RPIP-error box plots from a report JSON."""
import argparse
import os
import sys

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from detector.stream import read_trace
from evaluation.report import read_report
from shared.console import log


def plot_trace(trace, out_path, onsets=(), thr=None, title=None):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    t = trace["t_s"]

    ax1.plot(t, trace["pip"], linewidth=1, color='#A23B72', alpha=0.6, label='PIP')
    ax1.plot(t, trace["rpip"], linewidth=2, color='#2E86AB', label='RPIP')
    ax1.set_ylabel('Ictal probability', fontsize=12)
    ax1.set_ylim(-0.05, 1.05)
    ax1.grid(True, alpha=0.3)

    ax2.plot(t, trace["ap"], linewidth=2, color='#F18F01', label='AP')
    if thr is not None:
        ax2.axhline(thr, linestyle='--', color='gray', linewidth=1, label=f'Thr. = {thr}')
    ax2.set_xlabel('Time (s)', fontsize=12)
    ax2.set_ylabel('Accumulated probability', fontsize=12)
    ax2.grid(True, alpha=0.3)

    for ax in (ax1, ax2):
        for onset in onsets:
            ax.axvline(onset, color='black', linewidth=1.5)
        for t_d in trace.loc[trace["alarm_flag"] == 1, "t_s"]:
            ax.axvline(t_d, color='#C73E1D', linewidth=1, linestyle=':')
        ax.legend(loc='upper left', fontsize=9)

    if title:
        ax1.set_title(title, fontsize=14, fontweight='bold')
    plt.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    plt.savefig(out_path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    log('PLOT', f"saved {out_path}")
    return out_path


def plot_report(document, out_path):
    folds = document.get("folds", [])
    latencies = [f["latency_s"] for f in folds if f["latency_s"] is not None]
    errors = [f["rpip_error"] for f in folds]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 5))
    ax1.boxplot(latencies or [0.0])
    ax1.set_ylabel('Detection latency (s)', fontsize=12)
    ax1.set_xticks([])
    ax1.grid(True, alpha=0.3)
    ax2.boxplot(errors or [0.0])
    ax2.set_ylabel('RPIP error (%)', fontsize=12)
    ax2.set_xticks([])
    ax2.grid(True, alpha=0.3)
    fig.suptitle(f"Patient {document['summary']['patient']} ({document['summary']['sensitivity']})",
                 fontsize=14, fontweight='bold')
    plt.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    plt.savefig(out_path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    log('PLOT', f"saved {out_path}")
    return out_path


def main():
    parser = argparse.ArgumentParser(description='Plot a detector trace or a report')
    parser.add_argument('--trace', help='trace CSV')
    parser.add_argument('--report', help='report JSON')
    parser.add_argument('--onset', type=float, action='append', default=[], help='seizure onset (s), repeatable')
    parser.add_argument('--thr', type=float, default=None)
    parser.add_argument('--out', required=True, help='output PNG path')
    args = parser.parse_args()

    if args.trace:
        plot_trace(read_trace(args.trace), args.out, args.onset, args.thr)
    elif args.report:
        plot_report(read_report(args.report), args.out)
    else:
        parser.error('one of --trace or --report is required')


if __name__ == '__main__':
    main()
