/**
 * The next-sample form: one numeric field per parameter with range hints
 * from the schema. Validation is the server's job — the form forwards
 * whatever the operator typed and surfaces 422 field errors inline.
 *
 * Each composed submission carries a one-shot token so an impatient
 * double-click (or a retry racing a slow response) posts exactly once.
 */

import type { ApiClient } from "./api.js";
import type { ParameterInfo, SelectResult } from "./types.js";

export type SubmitOutcome = SelectResult | { kind: "error"; message: string };

export class SelectionForm {
  readonly element: HTMLFormElement;
  private readonly statusEl: HTMLElement;
  private readonly fields = new Map<string, HTMLInputElement>();
  private readonly errorEls = new Map<string, HTMLElement>();
  private inFlight = false;
  private submittedToken: string | null = null;
  private token: string = SelectionForm.freshToken();
  private lastOutcome: SubmitOutcome | null = null;

  constructor(
    private readonly client: ApiClient,
    private readonly runId: string,
    parameters: ParameterInfo[],
    private readonly onQueued?: (point: Record<string, number>) => void,
  ) {
    const doc = globalThis.document;
    this.element = doc.createElement("form");
    this.element.className = "selection-form";
    this.element.noValidate = true;

    for (const param of parameters) {
      const row = doc.createElement("div");
      row.className = "field";

      const label = doc.createElement("label");
      label.htmlFor = `param-${param.name}`;
      label.textContent = `${param.name} ${hintFor(param)}`;
      row.appendChild(label);

      const input = doc.createElement("input");
      input.type = "number";
      input.step = "any";
      input.id = `param-${param.name}`;
      input.name = param.name;
      if (param.lower !== null) input.min = String(param.lower);
      if (param.upper !== null) input.max = String(param.upper);
      input.addEventListener("input", () => this.touch());
      row.appendChild(input);
      this.fields.set(param.name, input);

      const error = doc.createElement("span");
      error.className = "field-error";
      error.dataset.field = param.name;
      row.appendChild(error);
      this.errorEls.set(param.name, error);

      this.element.appendChild(row);
    }

    const submit = doc.createElement("button");
    submit.type = "submit";
    submit.textContent = "Queue sample";
    this.element.appendChild(submit);

    this.statusEl = doc.createElement("p");
    this.statusEl.className = "form-status";
    this.element.appendChild(this.statusEl);

    this.element.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });
  }

  private static freshToken(): string {
    return `${Date.now().toString(36)}-${Math.random().toString(36).slice(2)}`;
  }

  /** Editing any field arms a new submission token. */
  private touch(): void {
    this.token = SelectionForm.freshToken();
  }

  values(): Record<string, number> {
    const out: Record<string, number> = {};
    for (const [name, input] of this.fields) {
      if (input.value.trim() !== "") {
        out[name] = Number(input.value);
      }
    }
    return out;
  }

  /** Restore previously typed values (used if the form node is rebuilt). */
  setValues(values: Record<string, number>): void {
    for (const [name, v] of Object.entries(values)) {
      const input = this.fields.get(name);
      if (input) input.value = String(v);
    }
  }

  async submit(): Promise<SubmitOutcome | null> {
    if (this.inFlight || this.token === this.submittedToken) {
      return null; // duplicate of an already-posted composition
    }
    this.inFlight = true;
    this.submittedToken = this.token;
    this.clearErrors();
    this.setStatus("submitting…");
    let outcome: SubmitOutcome;
    try {
      outcome = await this.client.select(this.runId, this.values());
    } catch (err) {
      // network failure: allow the same composition to be retried
      this.submittedToken = null;
      outcome = { kind: "error", message: String(err) };
    } finally {
      this.inFlight = false;
    }
    this.lastOutcome = outcome;
    switch (outcome.kind) {
      case "queued":
        this.setStatus("queued ✔");
        this.element.dataset.state = "queued";
        this.onQueued?.(outcome.point);
        break;
      case "invalid":
        this.submittedToken = null; // corrected form may be resubmitted
        this.showErrors(outcome.errors);
        this.setStatus("rejected — fix the highlighted fields");
        this.element.dataset.state = "invalid";
        break;
      case "conflict":
        this.setStatus(outcome.message);
        this.element.dataset.state = "conflict";
        break;
      case "error":
        this.setStatus(`request failed: ${outcome.message} — retry`);
        this.element.dataset.state = "error";
        break;
    }
    return outcome;
  }

  outcome(): SubmitOutcome | null {
    return this.lastOutcome;
  }

  showErrors(errors: Record<string, string>): void {
    for (const [field, message] of Object.entries(errors)) {
      const el = this.errorEls.get(field);
      if (el) el.textContent = message;
    }
  }

  clearErrors(): void {
    for (const el of this.errorEls.values()) {
      el.textContent = "";
    }
  }

  private setStatus(text: string): void {
    this.statusEl.textContent = text;
  }
}

function hintFor(param: ParameterInfo): string {
  if (param.kind === "discrete" && param.values) {
    return `(one of ${param.values.join(", ")})`;
  }
  if (param.lower !== null && param.upper !== null) {
    return `(${param.lower} … ${param.upper})`;
  }
  return "";
}
