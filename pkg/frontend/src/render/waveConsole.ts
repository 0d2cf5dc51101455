// Wave console: step a live multi-wave audit. Every button round-trips
// through the HTTP API; server rejections (409 out-of-order transitions,
// capacity violations, 422 numeric failures) surface inline.

import { ApiClient, ApiError } from "../api.js";
import { allowedActions, describeState } from "../state.js";
import type { SessionDoc, ValidatedRecord } from "../types.js";
import { el, fmt } from "./dom.js";
import { strumLabel } from "./traceExplorer.js";

export interface WaveConsoleOptions {
  client: ApiClient;
  session: SessionDoc;
  onSessionChange?: (session: SessionDoc) => void;
}

export function renderWaveConsole(options: WaveConsoleOptions): HTMLElement {
  const { client } = options;
  let session = options.session;

  const root = el("section", { class: "wave-console", "data-session": session.id });
  const status = el("p", { class: "state", "data-state": session.state });
  const errorBox = el("p", { class: "inline-error", role: "alert", hidden: "" });
  const body = el("div", { class: "console-body" });

  const planButton = el("button", { "data-action": "plan" }, ["Plan next wave"]);
  const ingestButton = el("button", { "data-action": "ingest" }, ["Ingest validated rows"]);
  const refitButton = el("button", { "data-action": "refit" }, ["Refit model"]);
  const finalizeButton = el("button", { "data-action": "finalize" }, ["Finalize audit"]);
  const ingestInput = el("textarea", {
    class: "ingest-input",
    placeholder: 'validated records as JSON, e.g. [{"ystar":1,"xstar":0,"z":0,"y":1,"x":0}]',
    rows: "4",
  });

  function showError(err: unknown): void {
    errorBox.removeAttribute("hidden");
    if (err instanceof ApiError) {
      errorBox.textContent = `${err.status} ${err.body.type}: ${err.body.message}`;
    } else {
      errorBox.textContent = String(err);
    }
  }

  function clearError(): void {
    errorBox.setAttribute("hidden", "");
    errorBox.textContent = "";
  }

  function update(next: SessionDoc): void {
    session = next;
    options.onSessionChange?.(next);
    redraw();
  }

  async function act(fn: () => Promise<unknown>): Promise<void> {
    clearError();
    try {
      await fn();
      update(await client.getSession(session.id));
    } catch (err) {
      showError(err);
    }
  }

  planButton.addEventListener("click", () =>
    act(() => client.planWave(session.id, 0, session.version)));
  ingestButton.addEventListener("click", () =>
    act(() => client.ingest(session.id, parseRecords(ingestInput.value), session.version)));
  refitButton.addEventListener("click", () =>
    act(() => client.refit(session.id, session.version)));
  finalizeButton.addEventListener("click", () =>
    act(() => client.finalize(session.id, session.version)));

  function redraw(): void {
    status.setAttribute("data-state", session.state);
    status.textContent = `${session.state} — ${describeState(session)}`;
    const actions = allowedActions(session);
    planButton.disabled = !actions.plan;
    ingestButton.disabled = !actions.ingest;
    refitButton.disabled = !actions.refit;
    finalizeButton.disabled = !actions.finalize;
    body.replaceChildren(
      planTable(session),
      fitSummary(session),
      timeline(session),
    );
  }

  root.append(
    el("h2", {}, [`Audit session ${session.id}`]),
    status,
    errorBox,
    el("div", { class: "controls" }, [
      planButton, refitButton, finalizeButton,
      el("div", { class: "ingest" }, [ingestInput, ingestButton]),
    ]),
    body,
  );
  redraw();
  return root;
}

export function parseRecords(text: string): ValidatedRecord[] {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    throw new Error("records must be a JSON array");
  }
  if (!Array.isArray(doc)) throw new Error("records must be a JSON array");
  return doc as ValidatedRecord[];
}

function planTable(session: SessionDoc): HTMLElement {
  const wrap = el("div", { class: "plans" });
  wrap.append(el("h3", {}, ["Wave plans"]));
  if (session.plans.length === 0) {
    wrap.append(el("p", {}, ["none yet"]));
    return wrap;
  }
  const table = el("table", {});
  const head = el("tr", {}, [el("th", {}, ["wave"]), el("th", {}, ["strategy"])]);
  for (const s of session.strata) head.append(el("th", {}, [strumLabel(s)]));
  table.append(head);
  for (const plan of session.plans) {
    const row = el("tr", {}, [
      el("td", {}, [String(plan.wave + 1)]),
      el("td", {}, [plan.strategy]),
    ]);
    for (const a of plan.incremental) row.append(el("td", {}, [String(a)]));
    table.append(row);
  }
  const cumulative = session.plans[session.plans.length - 1]!.cumulative;
  const totalRow = el("tr", { class: "total" }, [
    el("td", {}, ["planned total"]), el("td", {}, [""]),
  ]);
  for (const c of cumulative) totalRow.append(el("td", {}, [String(c)]));
  table.append(totalRow);
  wrap.append(table);
  return wrap;
}

function fitSummary(session: SessionDoc): HTMLElement {
  const wrap = el("div", { class: "fits" });
  wrap.append(el("h3", {}, ["Model refits"]));
  const fits = session.final_fit
    ? [...session.fits, { seq: -1, ...session.final_fit }]
    : session.fits;
  if (fits.length === 0) {
    wrap.append(el("p", {}, ["no fit yet"]));
    return wrap;
  }
  const table = el("table", {});
  table.append(el("tr", {}, [
    el("th", {}, ["fit"]), el("th", {}, ["validated"]),
    el("th", {}, ["log OR"]), el("th", {}, ["log-likelihood"]),
    el("th", {}, ["converged"]),
  ]));
  fits.forEach((fit, i) => {
    const isFinal = session.final_fit !== null && i === fits.length - 1;
    table.append(el("tr", {}, [
      el("td", {}, [isFinal ? "final" : `interim ${i + 1}`]),
      el("td", {}, [String(fit.n_validated)]),
      el("td", {}, [fmt(fit.theta.beta, 4)]),
      el("td", {}, [fmt(fit.loglik, 6)]),
      el("td", {}, [fit.converged ? "yes" : "no"]),
    ]));
  });
  wrap.append(table);
  return wrap;
}

function timeline(session: SessionDoc): HTMLElement {
  const wrap = el("div", { class: "timeline" });
  wrap.append(el("h3", {}, ["Timeline"]));
  const list = el("ol", {});
  for (const entry of session.audit_log) {
    list.append(el("li", { "data-action": entry.action }, [entry.action]));
  }
  wrap.append(list);
  return wrap;
}
