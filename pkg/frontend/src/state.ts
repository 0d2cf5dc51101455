// Client-side mirror of the session state machine. The server is the
// source of truth; these guards only decide which controls are enabled so
// that out-of-order actions are blocked before a request is even sent.

import type { SessionDoc } from "./types.js";

export interface WaveActions {
  plan: boolean;
  ingest: boolean;
  refit: boolean;
  finalize: boolean;
}

export function allowedActions(session: SessionDoc): WaveActions {
  const wavesLeft = session.plans.length < session.waves;
  switch (session.state) {
    case "created":
      return { plan: wavesLeft, ingest: false, refit: false, finalize: false };
    case "wave-planned":
      return { plan: false, ingest: true, refit: false, finalize: false };
    case "wave-data-ingested":
      // planning the next wave stays blocked until a refit newer than the
      // last ingest exists
      return {
        plan: wavesLeft && refitIsCurrent(session),
        ingest: false,
        refit: true,
        finalize: true,
      };
    case "finalized":
      return { plan: false, ingest: false, refit: false, finalize: false };
  }
}

export function refitIsCurrent(session: SessionDoc): boolean {
  const lastFit = session.fits.length
    ? session.fits[session.fits.length - 1]!.seq
    : -1;
  let lastIngest = -1;
  for (const entry of session.audit_log) {
    if (entry.action === "ingest") lastIngest = entry.seq;
  }
  return lastFit > lastIngest;
}

export function describeState(session: SessionDoc): string {
  switch (session.state) {
    case "created":
      return "No wave planned yet.";
    case "wave-planned":
      return `Wave ${session.plans.length} planned; waiting for validated records.`;
    case "wave-data-ingested":
      return refitIsCurrent(session)
        ? `Wave ${session.plans.length} ingested and refit; ready to plan the next wave.`
        : `Wave ${session.plans.length} ingested; refit before planning further.`;
    case "finalized":
      return "Audit finalized.";
  }
}
