// Strata-and-parameters entry forms. Inputs are validated client-side
// against the same JSON schemas the server enforces before anything is
// sent over the wire.

import strataSchema from "../schemas/strata.schema.json" with { type: "json" };
import paramsSchema from "../schemas/params.schema.json" with { type: "json" };
import { validate } from "../schema.js";
import type { ParamsDoc, StrataDoc } from "../types.js";
import { el } from "./dom.js";

export interface DesignFormValue {
  strata: StrataDoc;
  params: ParamsDoc | null;
  n: number;
  m: number;
  maxRows: number;
  strategy: "srs" | "ccstar" | "bccstar" | "optmle";
  seed: number;
}

export interface DesignFormHandles {
  root: HTMLElement;
  read: () => DesignFormValue;        // throws Error with a user message
  setError: (message: string) => void;
  clearError: () => void;
}

const EXAMPLE_STRATA: StrataDoc = {
  strata: [
    { ystar: 0, xstar: 0, z: 0, count: 5297 },
    { ystar: 0, xstar: 1, z: 0, count: 1130 },
    { ystar: 1, xstar: 0, z: 0, count: 2655 },
    { ystar: 1, xstar: 1, z: 0, count: 918 },
  ],
};

export function renderDesignForm(): DesignFormHandles {
  const strataInput = el("textarea", { rows: "8", class: "strata-input" });
  strataInput.value = JSON.stringify(EXAMPLE_STRATA, null, 2);
  const paramsInput = el("textarea", {
    rows: "8", class: "params-input",
    placeholder: "model + theta bundle (required for the optimal design)",
  });
  const nInput = numberInput("n", "400");
  const mInput = numberInput("m", "10");
  const maxRowsInput = numberInput("max-rows", "10000");
  const seedInput = numberInput("seed", "0");
  const strategySelect = el("select", { class: "strategy" });
  for (const name of ["optmle", "bccstar", "ccstar", "srs"]) {
    strategySelect.append(el("option", { value: name }, [name]));
  }
  const errorBox = el("p", { class: "inline-error", role: "alert", hidden: "" });

  const root = el("form", { class: "design-form" }, [
    labelled("Phase I stratum counts (JSON)", strataInput),
    labelled("Model parameters (JSON)", paramsInput),
    el("div", { class: "row" }, [
      labelled("audit size n", nInput),
      labelled("minimum per stratum m", mInput),
      labelled("max grid rows", maxRowsInput),
      labelled("seed", seedInput),
      labelled("strategy", strategySelect),
    ]),
    errorBox,
  ]);

  function read(): DesignFormValue {
    const strata = parseJson(strataInput.value, "strata");
    const strataIssues = validate(strata, strataSchema as never);
    if (strataIssues.length > 0) {
      throw new Error(`strata: ${strataIssues[0]!.path} ${strataIssues[0]!.message}`);
    }
    const strategy = strategySelect.value as DesignFormValue["strategy"];
    let params: ParamsDoc | null = null;
    if (paramsInput.value.trim() !== "") {
      const doc = parseJson(paramsInput.value, "params");
      const issues = validate(doc, paramsSchema as never);
      if (issues.length > 0) {
        throw new Error(`params: ${issues[0]!.path} ${issues[0]!.message}`);
      }
      params = doc as ParamsDoc;
    }
    if (strategy === "optmle" && params === null) {
      throw new Error("the optimal design needs model parameters");
    }
    return {
      strata: strata as StrataDoc,
      params,
      n: readInt(nInput, "n"),
      m: readInt(mInput, "m"),
      maxRows: readInt(maxRowsInput, "max rows"),
      strategy,
      seed: readInt(seedInput, "seed"),
    };
  }

  return {
    root,
    read,
    setError: (message) => {
      errorBox.textContent = message;
      errorBox.removeAttribute("hidden");
    },
    clearError: () => {
      errorBox.textContent = "";
      errorBox.setAttribute("hidden", "");
    },
  };
}

function numberInput(name: string, value: string): HTMLInputElement {
  return el("input", { type: "number", name, value });
}

function labelled(text: string, control: HTMLElement): HTMLElement {
  return el("label", {}, [el("span", {}, [text]), control]);
}

function parseJson(text: string, what: string): unknown {
  try {
    return JSON.parse(text);
  } catch {
    throw new Error(`${what} is not valid JSON`);
  }
}

function readInt(input: HTMLInputElement, what: string): number {
  const v = Number(input.value);
  if (!Number.isInteger(v)) throw new Error(`${what} must be an integer`);
  return v;
}
