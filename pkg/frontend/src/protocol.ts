// GENERATED FILE - do not edit by hand.
// Source of truth: protocol/messages.schema.json (npm run gen).

export interface Params {
  wire_feed_rate: number;
  welding_speed: number;
  gas_flow_rate: number;
  arc_length_setpoint: number;
  nozzle_distance: number;
  voltage_setpoint: number;
  equipment_id: string;
}

export interface Samples {
  type: "samples";
  seq: number;
  rate: number;
  params: Params;
  data: [number, number][];
}

export interface Prediction {
  type: "prediction";
  model_version: number;
  window: [number, number];
  p_ok: number;
  label: "OK" | "NOK";
  latency_ms: number;
}

export interface DriftAlert {
  type: "drift_alert";
  offending_fields: Record<string, number>;
  unseen_equipment?: string | null;
  nearest_task: string;
  timestamp?: number;
  recommended_action: string;
}

export interface ModelActivated {
  type: "model_activated";
  version: number;
}

export interface Ack {
  type: "ack";
  applied?: string;
}

export interface Error {
  type: "error";
  detail: string;
}

export interface Subscribe {
  type: "subscribe";
}

export interface SetParams {
  type: "set_params";
  wire_feed_rate?: number;
  welding_speed?: number;
  gas_flow_rate?: number;
  arc_length_setpoint?: number;
  nozzle_distance?: number;
  voltage_setpoint?: number;
  equipment_id?: string;
}

export interface TriggerUpdate {
  type: "trigger_update";
}

export type ServerMessage = Samples | Prediction | DriftAlert | ModelActivated | Ack | Error;

export type ClientMessage = Subscribe | SetParams | TriggerUpdate;

export const SERVER_MESSAGE_TYPES = ["samples","prediction","drift_alert","model_activated","ack","error"] as const;
