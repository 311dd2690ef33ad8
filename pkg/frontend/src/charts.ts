/**
 * SVG rendering for the acquisition view: one expected-improvement sweep
 * chart per input dimension, with markers at already-simulated inputs and
 * the most recently selected samples highlighted.
 *
 * Values are plotted exactly as the service reports them; no client-side
 * recomputation of acquisition quantities happens here.
 */

import type { AcquisitionProfile, HistoryRecord, Proposal, Sweep } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const WIDTH = 360;
const HEIGHT = 140;
const PAD = { left: 44, right: 10, top: 10, bottom: 26 };

type Scale = (v: number) => number;

function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  const span = hi - lo;
  if (span === 0) {
    return () => (outLo + outHi) / 2;
  }
  return (v) => outLo + ((v - lo) / span) * (outHi - outLo);
}

function svgEl<K extends keyof SVGElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string>,
): SVGElementTagNameMap[K] {
  const el = doc.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) {
    el.setAttribute(k, v);
  }
  return el;
}

function formatTick(v: number): string {
  if (v === 0) return "0";
  const abs = Math.abs(v);
  if (abs >= 1000 || abs < 0.01) return v.toExponential(1);
  return Number(v.toPrecision(3)).toString();
}

/** Build a single sweep chart (EI sum over one input, others at the incumbent). */
function renderSweep(
  doc: Document,
  sweep: Sweep,
  simulated: number[],
  lastSelected: number[],
): HTMLElement {
  const figure = doc.createElement("figure");
  figure.className = "ei-chart";
  figure.dataset.parameter = sweep.parameter;

  const caption = doc.createElement("figcaption");
  caption.textContent = `EI sum vs ${sweep.parameter}`;
  figure.appendChild(caption);

  const svg = svgEl(doc, "svg", {
    viewBox: `0 0 ${WIDTH} ${HEIGHT}`,
    width: String(WIDTH),
    height: String(HEIGHT),
    role: "img",
  });

  const xLo = Math.min(...sweep.values);
  const xHi = Math.max(...sweep.values);
  const yLo = Math.min(0, ...sweep.ei_sum);
  const yHi = Math.max(...sweep.ei_sum, yLo + 1e-12);
  const x = linearScale(xLo, xHi, PAD.left, WIDTH - PAD.right);
  const y = linearScale(yLo, yHi, HEIGHT - PAD.bottom, PAD.top);

  // axes
  svg.appendChild(
    svgEl(doc, "line", {
      class: "axis",
      x1: String(PAD.left),
      y1: String(HEIGHT - PAD.bottom),
      x2: String(WIDTH - PAD.right),
      y2: String(HEIGHT - PAD.bottom),
    }),
  );
  svg.appendChild(
    svgEl(doc, "line", {
      class: "axis",
      x1: String(PAD.left),
      y1: String(PAD.top),
      x2: String(PAD.left),
      y2: String(HEIGHT - PAD.bottom),
    }),
  );
  const xLabel = svgEl(doc, "text", {
    class: "axis-label",
    x: String((PAD.left + WIDTH - PAD.right) / 2),
    y: String(HEIGHT - 6),
    "text-anchor": "middle",
  });
  xLabel.textContent = sweep.parameter;
  svg.appendChild(xLabel);
  for (const [v, anchor] of [
    [xLo, "start"],
    [xHi, "end"],
  ] as const) {
    const tick = svgEl(doc, "text", {
      class: "tick",
      x: String(x(v)),
      y: String(HEIGHT - PAD.bottom + 12),
      "text-anchor": anchor,
    });
    tick.textContent = formatTick(v);
    svg.appendChild(tick);
  }
  for (const v of [yLo, yHi]) {
    const tick = svgEl(doc, "text", {
      class: "tick",
      x: String(PAD.left - 4),
      y: String(y(v) + 3),
      "text-anchor": "end",
    });
    tick.textContent = formatTick(v);
    svg.appendChild(tick);
  }

  // the EI sweep itself
  const points = sweep.values
    .map((v, i) => `${x(v).toFixed(2)},${y(sweep.ei_sum[i] ?? 0).toFixed(2)}`)
    .join(" ");
  svg.appendChild(
    svgEl(doc, "polyline", { class: "ei-line", points, fill: "none" }),
  );

  // markers at previously simulated inputs, pinned to the baseline
  for (const v of simulated) {
    svg.appendChild(
      svgEl(doc, "circle", {
        class: "sample-marker",
        cx: String(x(v)),
        cy: String(HEIGHT - PAD.bottom),
        r: "3",
      }),
    );
  }
  // last selected samples get a distinct highlight
  for (const v of lastSelected) {
    svg.appendChild(
      svgEl(doc, "circle", {
        class: "sample-marker last-selected",
        cx: String(x(v)),
        cy: String(HEIGHT - PAD.bottom),
        r: "5",
      }),
    );
  }

  figure.appendChild(svg);
  return figure;
}

function renderProposals(doc: Document, proposals: Proposal[]): HTMLElement {
  const section = doc.createElement("section");
  section.className = "proposals";
  const heading = doc.createElement("h3");
  heading.textContent = "Model proposals";
  section.appendChild(heading);
  const list = doc.createElement("ol");
  for (const prop of proposals) {
    const item = doc.createElement("li");
    item.className = "proposal";
    const inputs = Object.entries(prop.inputs)
      .map(([k, v]) => `${k}=${formatTick(v)}`)
      .join(", ");
    const means = Object.entries(prop.predicted_mean)
      .map(
        ([k, v]) =>
          `${k} ${formatTick(v)}±${formatTick(prop.predicted_std[k] ?? 0)}`,
      )
      .join("  ");
    item.textContent = `${inputs} — EI ${prop.ei_sum.toExponential(2)} — ${means}`;
    list.appendChild(item);
  }
  section.appendChild(list);
  return section;
}

/**
 * Render the full acquisition panel into `container` (replacing previous
 * content). An unavailable profile produces a placeholder with a retry
 * button instead of charts.
 */
export function renderAcquisition(
  container: HTMLElement,
  profile: AcquisitionProfile | null,
  history: HistoryRecord[],
  onRetry?: () => void,
): void {
  const doc = container.ownerDocument;
  container.replaceChildren();

  if (profile === null || !profile.available || profile.sweeps.length === 0) {
    const placeholder = doc.createElement("div");
    placeholder.className = "placeholder";
    placeholder.textContent =
      "No acquisition profile yet — the model needs at least one fitted cycle.";
    const retry = doc.createElement("button");
    retry.type = "button";
    retry.className = "retry";
    retry.textContent = "Retry";
    if (onRetry) retry.addEventListener("click", onRetry);
    placeholder.appendChild(retry);
    container.appendChild(placeholder);
    return;
  }

  const lastSelected = profile.last_selected ?? [];
  for (const sweep of profile.sweeps) {
    const simulated = history
      .map((rec) => rec.inputs[sweep.parameter])
      .filter((v): v is number => typeof v === "number");
    const selected = lastSelected
      .map((point) => point[sweep.parameter])
      .filter((v): v is number => typeof v === "number");
    container.appendChild(renderSweep(doc, sweep, simulated, selected));
  }
  if (profile.proposals.length > 0) {
    container.appendChild(renderProposals(doc, profile.proposals));
  }
}
