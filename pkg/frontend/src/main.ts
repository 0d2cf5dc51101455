// App wiring: the design studio screen (form -> job -> trace explorer)
// and the wave console for live multi-wave sessions, plus scenario
// save/load. The server computes everything; this file only moves JSON.

import { ApiClient, ApiError } from "./api.js";
import { renderDesignForm } from "./render/forms.js";
import { renderTraceExplorer } from "./render/traceExplorer.js";
import { renderWaveConsole } from "./render/waveConsole.js";
import { el, fmt } from "./render/dom.js";
import type { DesignOutputDoc, JobDoc } from "./types.js";

const SCENARIO_KEY = "auditopt.scenario";

export function mountApp(root: HTMLElement, client: ApiClient = new ApiClient()): void {
  const studio = el("div", { class: "screen screen-studio" });
  const waves = el("div", { class: "screen screen-waves", hidden: "" });
  const tabStudio = el("button", { type: "button", class: "tab active" }, ["Design studio"]);
  const tabWaves = el("button", { type: "button", class: "tab" }, ["Wave console"]);

  function show(which: "studio" | "waves"): void {
    studio.toggleAttribute("hidden", which !== "studio");
    waves.toggleAttribute("hidden", which !== "waves");
    tabStudio.classList.toggle("active", which === "studio");
    tabWaves.classList.toggle("active", which === "waves");
  }
  tabStudio.addEventListener("click", () => show("studio"));
  tabWaves.addEventListener("click", () => show("waves"));

  mountStudio(studio, client);
  mountWaveScreen(waves, client);
  root.replaceChildren(
    el("header", {}, [
      el("h1", {}, ["Two-phase audit design studio"]),
      el("nav", {}, [tabStudio, tabWaves]),
    ]),
    studio,
    waves,
  );
}

function mountStudio(root: HTMLElement, client: ApiClient): void {
  const form = renderDesignForm();
  const launch = el("button", { class: "launch", type: "button" }, ["Search"]);
  const cancel = el("button", { class: "cancel", type: "button", hidden: "" }, ["Cancel"]);
  const progress = el("p", { class: "job-progress", hidden: "" });
  const results = el("div", { class: "results" });

  const saveButton = el("button", { type: "button" }, ["Save scenario"]);
  const loadButton = el("button", { type: "button" }, ["Load scenario"]);
  saveButton.addEventListener("click", () => {
    const strataText = form.root.querySelector<HTMLTextAreaElement>(".strata-input")!.value;
    const paramsText = form.root.querySelector<HTMLTextAreaElement>(".params-input")!.value;
    localStorage.setItem(SCENARIO_KEY, JSON.stringify({ strataText, paramsText }));
  });
  loadButton.addEventListener("click", () => {
    const saved = localStorage.getItem(SCENARIO_KEY);
    if (!saved) return;
    const doc = JSON.parse(saved) as { strataText: string; paramsText: string };
    form.root.querySelector<HTMLTextAreaElement>(".strata-input")!.value = doc.strataText;
    form.root.querySelector<HTMLTextAreaElement>(".params-input")!.value = doc.paramsText;
  });

  let controller: AbortController | null = null;

  launch.addEventListener("click", async () => {
    form.clearError();
    let value;
    try {
      value = form.read();
    } catch (err) {
      form.setError(err instanceof Error ? err.message : String(err));
      return;
    }
    controller?.abort();
    controller = new AbortController();
    launch.disabled = true;
    cancel.removeAttribute("hidden");
    progress.removeAttribute("hidden");
    progress.textContent = "submitting…";
    try {
      const doc = await client.runDesign(
        {
          strata: value.strata,
          params: value.params,
          n: value.n,
          m: value.m,
          max_rows: value.maxRows,
          strategy: value.strategy,
          seed: value.seed,
        },
        (job: JobDoc<DesignOutputDoc>) => {
          const p = job.progress;
          progress.textContent = p
            ? `iteration ${p.iteration ?? "?"} (step ${p.step ?? "?"}): `
              + `${p.rows_done ?? 0}/${p.rows_total ?? "?"} designs scored`
            : job.status;
        },
        controller.signal,
      );
      results.replaceChildren(renderResults(doc));
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") {
        progress.textContent = "cancelled";
      } else {
        form.setError(err instanceof ApiError ? err.message : String(err));
      }
    } finally {
      launch.disabled = false;
      cancel.setAttribute("hidden", "");
    }
  });

  cancel.addEventListener("click", () => controller?.abort());

  root.replaceChildren(
    el("div", { class: "scenario-io" }, [saveButton, loadButton]),
    form.root,
    el("div", { class: "actions" }, [launch, cancel, progress]),
    results,
  );
}

function mountWaveScreen(root: HTMLElement, client: ApiClient): void {
  const idInput = el("input", { type: "text", placeholder: "session id" });
  const openButton = el("button", { type: "button" }, ["Open session"]);
  const createArea = el("textarea", {
    rows: "6",
    class: "session-create",
    placeholder: 'new-session JSON: {"strata": {...}, "model": {...}, "n": 400, "m": 10, "waves": 2}',
  });
  const createButton = el("button", { type: "button" }, ["Create session"]);
  const errorBox = el("p", { class: "inline-error", role: "alert", hidden: "" });
  const host = el("div", { class: "console-host" });

  function fail(err: unknown): void {
    errorBox.removeAttribute("hidden");
    errorBox.textContent = err instanceof ApiError ? err.message : String(err);
  }

  function open(sessionDoc: Parameters<typeof renderWaveConsole>[0]["session"]): void {
    errorBox.setAttribute("hidden", "");
    host.replaceChildren(renderWaveConsole({ client, session: sessionDoc }));
  }

  openButton.addEventListener("click", async () => {
    try {
      open(await client.getSession(idInput.value.trim()));
    } catch (err) {
      fail(err);
    }
  });
  createButton.addEventListener("click", async () => {
    try {
      const body = JSON.parse(createArea.value);
      open(await client.createSession(body));
    } catch (err) {
      fail(err);
    }
  });

  root.replaceChildren(
    el("div", { class: "session-picker" }, [
      el("div", { class: "row" }, [idInput, openButton]),
      createArea,
      createButton,
      errorBox,
    ]),
    host,
  );
}

function renderResults(doc: DesignOutputDoc): HTMLElement {
  const panel = el("section", { class: "design-result" });
  panel.append(el("h2", {}, [`${doc.strategy} design, n = ${doc.design.n}`]));
  if (doc.trace) {
    panel.append(renderTraceExplorer(doc.trace, doc.design.strata));
  } else {
    const table = el("table", {});
    table.append(el("tr", {}, [
      el("th", {}, ["stratum"]), el("th", {}, ["phase I"]),
      el("th", {}, ["audit"]), el("th", {}, ["probability"]),
    ]));
    doc.design.allocation.forEach((a, k) => {
      const s = doc.design.strata[k]!;
      table.append(el("tr", {}, [
        el("td", {}, [`y*=${s.ystar} x*=${s.xstar} z=${s.z}`]),
        el("td", {}, [String(s.count)]),
        el("td", {}, [String(a)]),
        el("td", {}, [fmt(doc.design.pis[k] ?? null, 3)]),
      ]));
    });
    panel.append(table);
  }
  return panel;
}

export { renderTraceExplorer, renderWaveConsole, ApiClient };

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountApp(document.getElementById("app")!);
}
