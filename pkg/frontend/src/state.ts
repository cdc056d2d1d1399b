// Dashboard state as a pure function of the message history.
//
// Every server message (and the few local UI actions) goes through
// `reduce`, which returns a new state object and never mutates its input.
// Replaying a recorded message log therefore reproduces the exact view,
// and all buffers are bounded so a long-running session cannot grow
// without limit.

import { DriftAlert, Params, Prediction, Samples, ServerMessage } from "./protocol.js";

export const LIMITS = {
  /** Display samples kept: 60 s at the 2 kHz display rate. */
  samplePoints: 60 * 2000,
  /** p_ok timeline entries kept: 60 s at 10 predictions/s. */
  predictions: 600,
  /** Unknown/debug messages kept. */
  debugEntries: 50,
  /** Dismissible banners kept. */
  banners: 20,
};

export interface TimelinePoint {
  seq: number;
  pOk: number;
  label: "OK" | "NOK";
  modelVersion: number;
  window: [number, number];
  latencyMs: number;
}

export interface Banner {
  id: number;
  kind: "drift" | "error";
  text: string;
  fields: Record<string, number>;
}

export interface DashboardState {
  connected: boolean;
  modelVersion: number | null;
  samples: Array<[number, number]>;
  sampleRate: number;
  lastParams: Params | null;
  timeline: TimelinePoint[];
  banners: Banner[];
  debugLog: string[];
  /** Prediction windows seen since the last set_params, i.e. records the
   *  service has buffered for a model update under the current regime. */
  bufferedRecords: number;
  nextBannerId: number;
  nextTimelineSeq: number;
}

export type LocalAction =
  | { type: "connection"; connected: boolean }
  | { type: "dismiss_banner"; id: number }
  | { type: "params_sent" };

export function initialState(): DashboardState {
  return {
    connected: false,
    modelVersion: null,
    samples: [],
    sampleRate: 0,
    lastParams: null,
    timeline: [],
    banners: [],
    debugLog: [],
    bufferedRecords: 0,
    nextBannerId: 1,
    nextTimelineSeq: 1,
  };
}

function capEnd<T>(items: T[], limit: number): T[] {
  return items.length > limit ? items.slice(items.length - limit) : items;
}

function withBanner(
  state: DashboardState,
  kind: Banner["kind"],
  text: string,
  fields: Record<string, number> = {},
): DashboardState {
  const banner: Banner = { id: state.nextBannerId, kind, text, fields };
  return {
    ...state,
    banners: capEnd([...state.banners, banner], LIMITS.banners),
    nextBannerId: state.nextBannerId + 1,
  };
}

function onSamples(state: DashboardState, msg: Samples): DashboardState {
  return {
    ...state,
    samples: capEnd([...state.samples, ...msg.data], LIMITS.samplePoints),
    sampleRate: msg.rate,
    lastParams: msg.params,
  };
}

function onPrediction(state: DashboardState, msg: Prediction): DashboardState {
  const point: TimelinePoint = {
    seq: state.nextTimelineSeq,
    pOk: msg.p_ok,
    label: msg.label,
    modelVersion: msg.model_version,
    window: msg.window,
    latencyMs: msg.latency_ms,
  };
  return {
    ...state,
    timeline: capEnd([...state.timeline, point], LIMITS.predictions),
    bufferedRecords: state.bufferedRecords + 1,
    nextTimelineSeq: state.nextTimelineSeq + 1,
  };
}

function onDrift(state: DashboardState, msg: DriftAlert): DashboardState {
  const parts = Object.entries(msg.offending_fields).map(
    ([name, z]) => `${name} (z = ${z.toFixed(1)})`,
  );
  if (msg.unseen_equipment) {
    parts.push(`unseen equipment ${msg.unseen_equipment}`);
  }
  const text = `Process drift vs ${msg.nearest_task}: ${parts.join(", ")} — ${msg.recommended_action} recommended`;
  return withBanner(state, "drift", text, msg.offending_fields);
}

export function reduce(
  state: DashboardState,
  msg: ServerMessage | LocalAction | { type: string },
): DashboardState {
  switch (msg.type) {
    case "samples":
      return onSamples(state, msg as Samples);
    case "prediction":
      return onPrediction(state, msg as Prediction);
    case "drift_alert":
      return onDrift(state, msg as DriftAlert);
    case "model_activated":
      return { ...state, modelVersion: (msg as { version: number }).version };
    case "ack":
      return state;
    case "error":
      return withBanner(state, "error", (msg as { detail: string }).detail);
    case "connection":
      return { ...state, connected: (msg as LocalAction & { connected: boolean }).connected };
    case "dismiss_banner": {
      const id = (msg as LocalAction & { id: number }).id;
      return { ...state, banners: state.banners.filter((b) => b.id !== id) };
    }
    case "params_sent":
      // the service restarts its labeled-window buffer on a regime change
      return { ...state, bufferedRecords: 0 };
    default:
      // unknown types are never dropped silently: raw JSON into the debug panel
      return {
        ...state,
        debugLog: capEnd([...state.debugLog, JSON.stringify(msg)], LIMITS.debugEntries),
      };
  }
}

/** The update button is blocked until the service has buffered records. */
export function updateBlockReason(state: DashboardState): string | null {
  if (!state.connected) {
    return "Disconnected: controls are disabled until the stream reconnects.";
  }
  if (state.bufferedRecords === 0) {
    return (
      "No prediction windows have been buffered under the current " +
      "parameters yet; an update would have an empty dataset. Wait for " +
      "predictions to accumulate after a parameter change."
    );
  }
  return null;
}

export function confirmUpdateText(state: DashboardState): string {
  return (
    `Retrain the classifier on ${state.bufferedRecords} buffered ` +
    `prediction windows and activate the new model version?`
  );
}
