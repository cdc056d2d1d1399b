import { describe, expect, it } from "vitest";

import { DriftAlert, Params, Prediction, Samples } from "../src/protocol.js";
import {
  confirmUpdateText,
  DashboardState,
  initialState,
  LIMITS,
  reduce,
  updateBlockReason,
} from "../src/state.js";

const params: Params = {
  wire_feed_rate: 8,
  welding_speed: 30,
  gas_flow_rate: 15,
  arc_length_setpoint: 3,
  nozzle_distance: 15,
  voltage_setpoint: 32,
  equipment_id: "rig-0",
};

function samplesMsg(seq: number, n = 100): Samples {
  return {
    type: "samples",
    seq,
    rate: 2000,
    params,
    data: Array.from({ length: n }, (_, i) => [200 + i, 28] as [number, number]),
  };
}

function predictionMsg(pOk: number, version = 1): Prediction {
  return {
    type: "prediction",
    model_version: version,
    window: [0, 63],
    p_ok: pOk,
    label: pOk >= 0.5 ? "OK" : "NOK",
    latency_ms: 2.5,
  };
}

const driftMsg: DriftAlert = {
  type: "drift_alert",
  offending_fields: { wire_feed_rate: 5.1 },
  unseen_equipment: null,
  nearest_task: "task-0",
  timestamp: 0,
  recommended_action: "model_update",
};

function replay(log: Array<{ type: string }>): DashboardState {
  return log.reduce(reduce, initialState());
}

describe("reducer purity and replay", () => {
  it("replaying a recorded log reproduces the state exactly", () => {
    const log = [
      { type: "connection", connected: true },
      { type: "model_activated", version: 1 },
      samplesMsg(1),
      predictionMsg(0.93),
      driftMsg,
      samplesMsg(2),
      predictionMsg(0.4),
      { type: "mystery", payload: 42 },
    ];
    expect(replay(log)).toEqual(replay(log));
  });

  it("never mutates the previous state", () => {
    const before = replay([samplesMsg(1), predictionMsg(0.9)]);
    const frozen = JSON.stringify(before);
    reduce(before, predictionMsg(0.1));
    reduce(before, driftMsg);
    reduce(before, { type: "dismiss_banner", id: 1 });
    expect(JSON.stringify(before)).toBe(frozen);
  });
});

describe("bounded buffers", () => {
  it("sustains 10 predictions/s for 60 s without growing past the cap", () => {
    let state = initialState();
    const sizes: number[] = [];
    for (let i = 0; i < 600; i++) {
      state = reduce(state, predictionMsg(Math.random()));
      sizes.push(state.timeline.length);
    }
    // another minute of traffic must not grow the buffer any further
    for (let i = 0; i < 600; i++) {
      state = reduce(state, predictionMsg(0.5));
      expect(state.timeline.length).toBeLessThanOrEqual(LIMITS.predictions);
    }
    expect(state.timeline.length).toBe(LIMITS.predictions);
    expect(Math.max(...sizes)).toBeLessThanOrEqual(LIMITS.predictions);
    // newest entries win
    expect(state.timeline[state.timeline.length - 1].seq).toBe(1200);
  });

  it("caps the display-sample buffer at 60 s of stream", () => {
    let state = initialState();
    for (let seq = 0; seq < 2000; seq++) {
      state = reduce(state, samplesMsg(seq, 100)); // 200k points total
      expect(state.samples.length).toBeLessThanOrEqual(LIMITS.samplePoints);
    }
    expect(state.samples.length).toBe(LIMITS.samplePoints);
  });

  it("caps the debug log", () => {
    let state = initialState();
    for (let i = 0; i < 200; i++) {
      state = reduce(state, { type: "weird", i });
    }
    expect(state.debugLog.length).toBe(LIMITS.debugEntries);
    expect(state.debugLog[LIMITS.debugEntries - 1]).toContain('"i":199');
  });
});

describe("message handling", () => {
  it("renders predictions onto the timeline with label and version", () => {
    const state = replay([{ type: "model_activated", version: 3 }, predictionMsg(0.93, 3)]);
    expect(state.modelVersion).toBe(3);
    const point = state.timeline[0];
    expect(point.pOk).toBe(0.93);
    expect(point.label).toBe("OK");
    expect(point.modelVersion).toBe(3);
  });

  it("drift alerts become dismissible banners naming field and z-score", () => {
    let state = replay([driftMsg]);
    expect(state.banners).toHaveLength(1);
    expect(state.banners[0].text).toContain("wire_feed_rate");
    expect(state.banners[0].text).toContain("z = 5.1");
    state = reduce(state, { type: "dismiss_banner", id: state.banners[0].id });
    expect(state.banners).toHaveLength(0);
  });

  it("flags unseen equipment in the banner", () => {
    const state = replay([
      { ...driftMsg, offending_fields: {}, unseen_equipment: "rig-9" },
    ]);
    expect(state.banners[0].text).toContain("rig-9");
  });

  it("model_activated updates the version badge", () => {
    let state = replay([{ type: "model_activated", version: 1 }]);
    state = reduce(state, { type: "model_activated", version: 2 });
    expect(state.modelVersion).toBe(2);
  });

  it("samples messages echo the live parameters", () => {
    const state = replay([samplesMsg(1)]);
    expect(state.lastParams?.wire_feed_rate).toBe(8);
    expect(state.sampleRate).toBe(2000);
  });

  it("unknown message types land in the debug panel, never dropped", () => {
    const state = replay([{ type: "telemetry_v2", value: 7 }]);
    expect(state.debugLog).toHaveLength(1);
    expect(JSON.parse(state.debugLog[0])).toEqual({ type: "telemetry_v2", value: 7 });
  });

  it("error messages surface as banners", () => {
    const state = replay([{ type: "error", detail: "update failed: boom" }]);
    expect(state.banners[0].kind).toBe("error");
    expect(state.banners[0].text).toContain("boom");
  });
});

describe("update gating", () => {
  it("blocks the update with an explanation at 0 buffered records", () => {
    let state = replay([{ type: "connection", connected: true }]);
    expect(updateBlockReason(state)).toContain("empty dataset");
    state = reduce(state, predictionMsg(0.8));
    expect(updateBlockReason(state)).toBeNull();
    expect(confirmUpdateText(state)).toContain("1 buffered");
  });

  it("is disabled while disconnected", () => {
    const state = replay([predictionMsg(0.8)]);
    expect(updateBlockReason(state)).toContain("Disconnected");
  });

  it("resets the buffered count when parameters change", () => {
    let state = replay([
      { type: "connection", connected: true },
      predictionMsg(0.8),
      predictionMsg(0.7),
    ]);
    expect(state.bufferedRecords).toBe(2);
    state = reduce(state, { type: "params_sent" });
    expect(state.bufferedRecords).toBe(0);
    expect(updateBlockReason(state)).not.toBeNull();
  });
});
