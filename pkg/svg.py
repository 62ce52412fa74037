# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Hand-emitted SVG scatter and box plots for evaluation reports."""
from xml.sax.saxutils import escape

import numpy as np

from .exceptions import DataIOError

WIDTH, HEIGHT = 480, 400
MARGIN = 56
COLORS = ("#1f77b4", "#d62728", "#2ca02c")


class SvgCanvas:
    def __init__(self, width=WIDTH, height=HEIGHT):
        self.width = width
        self.height = height
        self.svg = (f'<svg version="1.1" width="{width}" height="{height}" '
                    f'viewBox="0 0 {width} {height}" xmlns="http://www.w3.org/2000/svg">\n'
                    f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n')

    def line(self, x1, y1, x2, y2, stroke="black", extra=""):
        self.svg += (f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                     f'stroke="{stroke}" {extra}/>\n')

    def circle(self, x, y, r=2.5, fill="#1f77b4"):
        self.svg += f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{fill}" fill-opacity="0.7"/>\n'

    def rect(self, x1, y1, x2, y2, fill="none", stroke="black"):
        x, y = min(x1, x2), min(y1, y2)
        self.svg += (f'<rect x="{x:.2f}" y="{y:.2f}" width="{abs(x2 - x1):.2f}" '
                     f'height="{abs(y2 - y1):.2f}" fill="{fill}" stroke="{stroke}"/>\n')

    def text(self, x, y, string, extra=""):
        self.svg += f'<text x="{x:.2f}" y="{y:.2f}" font-size="12" {extra}>{escape(str(string))}</text>\n'

    def get_svg(self):
        return f"{self.svg}</svg>\n"

    def save(self, path):
        try:
            with open(path, "w", encoding="utf-8") as f:
                f.write(self.get_svg())
        except OSError as err:
            raise DataIOError(f"cannot write plot {path}: {err}")
        return path


class _Axis:
    def __init__(self, lo, hi, start, stop):
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.05 * (hi - lo)
        self.lo, self.hi = lo - pad, hi + pad
        self.start, self.stop = start, stop

    def __call__(self, v):
        return self.start + (v - self.lo) / (self.hi - self.lo) * (self.stop - self.start)


def _frame(canvas, title, xlabel, ylabel):
    w, h = canvas.width, canvas.height
    canvas.rect(MARGIN, MARGIN / 2, w - MARGIN / 2, h - MARGIN)
    canvas.text(w / 2, MARGIN / 3, title, 'text-anchor="middle"')
    canvas.text(w / 2, h - MARGIN / 4, xlabel, 'text-anchor="middle"')
    canvas.text(MARGIN / 4, h / 2, ylabel,
                f'text-anchor="middle" transform="rotate(-90 {MARGIN / 4:.2f} {h / 2:.2f})"')


def _ticks(canvas, xaxis, yaxis):
    for v in np.linspace(xaxis.lo, xaxis.hi, 5):
        canvas.text(xaxis(v), canvas.height - MARGIN + 14, f"{v:.3g}", 'text-anchor="middle"')
    for v in np.linspace(yaxis.lo, yaxis.hi, 5):
        canvas.text(MARGIN - 4, yaxis(v) + 4, f"{v:.3g}", 'text-anchor="end"')


def scatter_plot(path, series, title="", xlabel="truth", ylabel="prediction"):
    """`series` maps a legend label to (truth, prediction) arrays."""
    canvas = SvgCanvas()
    values = np.concatenate([np.concatenate([np.ravel(t), np.ravel(p)])
                             for t, p in series.values()] or [np.zeros(1)])
    lo, hi = float(values.min()), float(values.max())
    xaxis = _Axis(lo, hi, MARGIN, canvas.width - MARGIN / 2)
    yaxis = _Axis(lo, hi, canvas.height - MARGIN, MARGIN / 2)
    _frame(canvas, title, xlabel, ylabel)
    _ticks(canvas, xaxis, yaxis)
    canvas.line(xaxis(xaxis.lo), yaxis(yaxis.lo), xaxis(xaxis.hi), yaxis(yaxis.hi),
                stroke="gray", extra='stroke-dasharray="4 3"')
    for n, (label, (truth, pred)) in enumerate(series.items()):
        color = COLORS[n % len(COLORS)]
        for t, p in zip(np.ravel(truth), np.ravel(pred)):
            canvas.circle(xaxis(t), yaxis(p), fill=color)
        canvas.text(MARGIN + 8, MARGIN / 2 + 16 * (n + 1), label, f'fill="{color}"')
    return canvas.save(path)


def box_plot(path, boxes, title="", xlabel="", ylabel=""):
    """`boxes` is a list of (label, summary) with min/q1/median/q3/max keys."""
    canvas = SvgCanvas()
    values = [v for _, s in boxes for v in (s["min"], s["max"])] or [0.0]
    yaxis = _Axis(min(values), max(values), canvas.height - MARGIN, MARGIN / 2)
    _frame(canvas, title, xlabel, ylabel)
    slot = (canvas.width - 1.5 * MARGIN) / max(len(boxes), 1)
    for v in np.linspace(yaxis.lo, yaxis.hi, 5):
        canvas.text(MARGIN - 4, yaxis(v) + 4, f"{v:.3g}", 'text-anchor="end"')
    for i, (label, s) in enumerate(boxes):
        cx = MARGIN + slot * (i + 0.5)
        half = slot * 0.25
        canvas.line(cx, yaxis(s["min"]), cx, yaxis(s["q1"]))
        canvas.line(cx, yaxis(s["q3"]), cx, yaxis(s["max"]))
        canvas.rect(cx - half, yaxis(s["q1"]), cx + half, yaxis(s["q3"]), fill="#c6dbef")
        canvas.line(cx - half, yaxis(s["median"]), cx + half, yaxis(s["median"]),
                    stroke="#d62728")
        canvas.text(cx, canvas.height - MARGIN + 14, label, 'text-anchor="middle"')
    return canvas.save(path)
