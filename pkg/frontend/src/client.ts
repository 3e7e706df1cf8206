/**
 * Session wiring: create a session over HTTP, stream frames over the
 * WebSocket, and push actions through the queueing channel.
 */
import { ActionChannel } from "./actions.js";
import type { DatasetMeta, Frame } from "./protocol.js";

export async function fetchDatasets(baseUrl = ""): Promise<DatasetMeta[]> {
  const resp = await fetch(`${baseUrl}/datasets`);
  if (!resp.ok) {
    throw new Error(`GET /datasets failed: ${resp.status}`);
  }
  return (await resp.json()) as DatasetMeta[];
}

export async function createSession(
  dataset: string,
  baseUrl = "",
): Promise<string> {
  const resp = await fetch(`${baseUrl}/sessions`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ dataset }),
  });
  if (!resp.ok) {
    throw new Error(`POST /sessions failed: ${resp.status}`);
  }
  const body = (await resp.json()) as { session_id: string };
  return body.session_id;
}

export interface StreamHandlers {
  onFrame(frame: Frame): void;
  onStatus(status: "connecting" | "open" | "closed"): void;
}

export function openStream(
  sessionId: string,
  channel: ActionChannel,
  handlers: StreamHandlers,
): WebSocket {
  const proto = location.protocol === "https:" ? "wss:" : "ws:";
  const ws = new WebSocket(
    `${proto}//${location.host}/sessions/${sessionId}/stream`,
  );
  handlers.onStatus("connecting");
  ws.onopen = () => {
    handlers.onStatus("open");
    channel.connect((action) => ws.send(JSON.stringify(action)));
  };
  ws.onmessage = (ev) => {
    handlers.onFrame(JSON.parse(ev.data as string) as Frame);
  };
  ws.onclose = () => {
    channel.disconnect();
    handlers.onStatus("closed");
  };
  return ws;
}
