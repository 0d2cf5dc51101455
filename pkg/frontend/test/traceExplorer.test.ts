// The trace explorer must render the golden search payload with a stable
// DOM: same payload in, same markup out.

import { describe, expect, it } from "vitest";

import { renderTraceExplorer } from "../src/render/traceExplorer.js";
import type { DesignOutputDoc } from "../src/types.js";
import golden from "./fixtures/golden_design.json" with { type: "json" };

const doc = golden as unknown as DesignOutputDoc;

describe("trace explorer", () => {
  it("renders the golden three-iteration trace", () => {
    const node = renderTraceExplorer(doc.trace!, doc.design.strata);
    const panels = node.querySelectorAll("details.iteration");
    expect(panels.length).toBe(3);
    expect(node.querySelector("summary")!.textContent).toContain("2925 candidate designs");
    const steps = [...panels].map((p) => p.getAttribute("data-step"));
    expect(steps).toEqual(["15", "5", "1"]);
  });

  it("shows the selected design with totals from the payload only", () => {
    const node = renderTraceExplorer(doc.trace!, doc.design.strata);
    const final = node.querySelector(".final-design")!;
    const cells = [...final.querySelectorAll("tr.total td")].map((td) => td.textContent);
    expect(cells[1]).toBe("10000");
    expect(cells[2]).toBe("400");
  });

  it("plots one best marker per iteration", () => {
    const node = renderTraceExplorer(doc.trace!, doc.design.strata);
    expect(node.querySelectorAll("circle.best").length).toBe(3);
    expect(node.querySelectorAll("circle.candidate").length).toBeGreaterThan(100);
  });

  it("produces snapshot-stable markup", () => {
    const host = document.createElement("div");
    host.append(renderTraceExplorer(doc.trace!, doc.design.strata));
    expect(host.innerHTML).toMatchSnapshot();
  });

  it("is deterministic for identical payloads", () => {
    const a = document.createElement("div");
    const b = document.createElement("div");
    a.append(renderTraceExplorer(doc.trace!, doc.design.strata));
    b.append(renderTraceExplorer(doc.trace!, doc.design.strata));
    expect(a.innerHTML).toBe(b.innerHTML);
  });
});
