// Entry point: wires the socket, reducer and renderer together.
//
// Single-threaded and event-driven: one socket, one state object, one
// render per animation frame when the state changed.

import { Params, SetParams } from "./protocol.js";
import { StreamSocket } from "./socket.js";
import {
  confirmUpdateText,
  DashboardState,
  initialState,
  reduce,
  updateBlockReason,
} from "./state.js";
import { lookupElements, render } from "./ui.js";

const PARAM_FIELDS: Array<{ name: keyof Params & string; min: number; max: number; step: number }> = [
  { name: "wire_feed_rate", min: 2, max: 20, step: 0.1 },
  { name: "welding_speed", min: 10, max: 80, step: 0.5 },
  { name: "gas_flow_rate", min: 5, max: 30, step: 0.5 },
  { name: "arc_length_setpoint", min: 1, max: 8, step: 0.1 },
  { name: "nozzle_distance", min: 5, max: 30, step: 0.5 },
  { name: "voltage_setpoint", min: 18, max: 45, step: 0.5 },
];

function main(): void {
  const els = lookupElements(document);
  let state: DashboardState = initialState();
  let dirty = true;

  const dispatch = (msg: { type: string }) => {
    state = reduce(state, msg);
    dirty = true;
  };

  const url = `${location.origin.replace(/^http/, "ws")}/stream`;
  const socket = new StreamSocket(url, dispatch, (connected) =>
    dispatch({ type: "connection", connected } as { type: string }),
  );
  socket.connect();

  // parameter sliders: initialized from the first samples-message echo
  const form = document.getElementById("params")!;
  const sliders = new Map<string, HTMLInputElement>();
  for (const field of PARAM_FIELDS) {
    const label = document.createElement("label");
    label.textContent = field.name.replace(/_/g, " ");
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(field.min);
    input.max = String(field.max);
    input.step = String(field.step);
    const value = document.createElement("span");
    input.oninput = () => {
      value.textContent = input.value;
    };
    input.onchange = () => sendParams();
    sliders.set(field.name, input);
    label.append(input, value);
    form.appendChild(label);
  }

  let seeded = false;
  const seedSliders = () => {
    if (seeded || !state.lastParams) return;
    for (const [name, input] of sliders) {
      input.value = String(state.lastParams[name as keyof Params]);
      (input.nextElementSibling as HTMLElement).textContent = input.value;
    }
    seeded = true;
  };

  const sendParams = () => {
    if (!state.connected || !state.lastParams) return;
    const msg: SetParams = { type: "set_params", ...state.lastParams };
    for (const [name, input] of sliders) {
      (msg as unknown as Record<string, number>)[name] = Number(input.value);
    }
    if (socket.send(msg)) {
      dispatch({ type: "params_sent" });
    }
  };

  const updateBtn = document.getElementById("update") as HTMLButtonElement;
  updateBtn.onclick = () => {
    const blocked = updateBlockReason(state);
    if (blocked) {
      window.alert(blocked);
      return;
    }
    if (window.confirm(confirmUpdateText(state))) {
      socket.send({ type: "trigger_update" });
    }
  };

  const frame = () => {
    if (dirty) {
      dirty = false;
      seedSliders();
      updateBtn.disabled = !state.connected;
      render(els, state, (id) =>
        dispatch({ type: "dismiss_banner", id } as { type: string }),
      );
    }
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

window.addEventListener("load", main);
