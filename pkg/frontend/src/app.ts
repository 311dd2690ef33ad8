/**
 * Dashboard wiring: poll the service for run state, history, and the
 * acquisition profile, and keep the three panels (status, charts, form)
 * up to date. Polling rebuilds the read-only panels only; the form node
 * is created once so a selection being composed survives refreshes.
 */

import { ApiClient, ApiError } from "./api.js";
import { renderAcquisition } from "./charts.js";
import { SelectionForm } from "./form.js";
import type { HistoryRecord, RunState } from "./types.js";

export type Dashboard = {
  refresh: () => Promise<void>;
  stop: () => void;
  form: SelectionForm | null;
};

const TARGETS = ["L1", "L2", "L3", "L4", "L5", "L6", "L7"];

function renderStatus(panel: HTMLElement, state: RunState): void {
  const doc = panel.ownerDocument;
  panel.replaceChildren();
  const dl = doc.createElement("dl");
  const rows: [string, string][] = [
    ["status", state.status + (state.stop_reason ? ` (${state.stop_reason})` : "")],
    ["iteration", String(state.iteration)],
    ["cycle", String(state.cycle)],
    ["energy", `${state.consumed_energy_j.toFixed(0)} J`],
    [
      "best",
      state.best_so_far === null
        ? "—"
        : `${state.best_so_far.value.toFixed(4)} @ ` +
          Object.entries(state.best_so_far.inputs)
            .map(([k, v]) => `${k}=${Number(v.toPrecision(4))}`)
            .join(", "),
    ],
    [
      "last EI sum",
      state.ei_sum_history.length === 0
        ? "—"
        : state.ei_sum_history[state.ei_sum_history.length - 1]!.toExponential(3),
    ],
  ];
  for (const [term, detail] of rows) {
    const dt = doc.createElement("dt");
    dt.textContent = term;
    const dd = doc.createElement("dd");
    dd.dataset.field = term;
    dd.textContent = detail;
    dl.appendChild(dt);
    dl.appendChild(dd);
  }
  panel.appendChild(dl);
}

function renderHistory(panel: HTMLElement, records: HistoryRecord[]): void {
  const doc = panel.ownerDocument;
  panel.replaceChildren();
  const table = doc.createElement("table");
  table.className = "history";
  const header = doc.createElement("tr");
  const inputNames = records.length > 0 ? Object.keys(records[0]!.inputs) : [];
  for (const name of ["#", "source", ...inputNames, ...TARGETS]) {
    const th = doc.createElement("th");
    th.textContent = name;
    header.appendChild(th);
  }
  table.appendChild(header);
  for (const rec of records) {
    const tr = doc.createElement("tr");
    tr.dataset.iteration = String(rec.meta.iteration);
    const cells = [
      String(rec.meta.iteration),
      rec.meta.source,
      ...inputNames.map((n) => String(Number((rec.inputs[n] ?? 0).toPrecision(5)))),
      ...TARGETS.map((t) => (rec.targets[t] ?? 0).toFixed(1)),
    ];
    for (const text of cells) {
      const td = doc.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    table.appendChild(tr);
  }
  panel.appendChild(table);
}

function renderBanner(root: HTMLElement, message: string | null): void {
  const doc = root.ownerDocument;
  let banner = root.querySelector<HTMLElement>(".error-banner");
  if (message === null) {
    banner?.remove();
    return;
  }
  if (!banner) {
    banner = doc.createElement("div");
    banner.className = "error-banner";
    root.prepend(banner);
  }
  banner.textContent = message;
}

/**
 * Mount the dashboard for `runId` under `root` and start polling.
 * Returns handles used by tests (manual refresh, stop, the form).
 */
export async function startApp(
  root: HTMLElement,
  client: ApiClient,
  runId: string,
  options: { pollMs?: number; autoPoll?: boolean } = {},
): Promise<Dashboard> {
  const doc = root.ownerDocument;
  root.replaceChildren();

  const statusPanel = doc.createElement("section");
  statusPanel.className = "status-panel";
  const chartsPanel = doc.createElement("section");
  chartsPanel.className = "charts-panel";
  const formPanel = doc.createElement("section");
  formPanel.className = "form-panel";
  const historyPanel = doc.createElement("section");
  historyPanel.className = "history-panel";
  root.append(statusPanel, chartsPanel, formPanel, historyPanel);

  let form: SelectionForm | null = null;
  try {
    const parameters = await client.getParameters(runId);
    form = new SelectionForm(client, runId, parameters, () => void refresh());
    formPanel.appendChild(form.element);
  } catch (err) {
    renderBanner(root, describe(err));
    return { refresh: async () => {}, stop: () => {}, form: null };
  }

  let refreshing = false;
  async function refresh(): Promise<void> {
    if (refreshing) return; // reads are cheap but never overlap
    refreshing = true;
    try {
      const [state, history, profile] = await Promise.all([
        client.getState(runId),
        client.getHistory(runId),
        client.getAcquisition(runId),
      ]);
      renderBanner(root, null);
      renderStatus(statusPanel, state);
      renderHistory(historyPanel, history);
      renderAcquisition(chartsPanel, profile, history, () => void refresh());
    } catch (err) {
      renderBanner(root, describe(err));
      chartsPanel.replaceChildren();
    } finally {
      refreshing = false;
    }
  }

  await refresh();
  let timer: ReturnType<typeof setInterval> | null = null;
  if (options.autoPoll !== false) {
    timer = setInterval(() => void refresh(), options.pollMs ?? 2000);
  }

  return {
    refresh,
    stop: () => {
      if (timer !== null) clearInterval(timer);
    },
    form,
  };
}

function describe(err: unknown): string {
  if (err instanceof ApiError && err.status === 404) {
    return "run not found — check the run id in the URL";
  }
  return String(err);
}

/** Entry point for the browser shell: run id comes from the URL query. */
export function bootFromLocation(win: Window): Promise<Dashboard> | null {
  const params = new URLSearchParams(win.location.search);
  const runId = params.get("run");
  const root = win.document.getElementById("app");
  if (!runId || !root) return null;
  const client = new ApiClient(params.get("api") ?? "");
  return startApp(root, client, runId);
}
