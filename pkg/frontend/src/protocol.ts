// JSON shapes spoken by the node's local API. The UI performs no
// cryptography and holds no truth of its own: everything here is either a
// command for the node or an event reported by it.

export interface StatusEvent {
  op: "status";
  msg_id: string;
  state: "pending" | "sent_direct" | "queued" | "delivered" | "failed";
  error?: string;
}

export interface InboundEvent {
  op: "inbound";
  from: string;
  text: string;
  path: "direct" | "dmq";
  received_at: number;
  msg_id: string;
}

export interface ProposalEvent {
  op: "proposal";
  proposal: string;
  kind: string;
  subject: string;
  deadline: number;
}

export interface TallyEvent {
  op: "tally";
  proposal: string;
  yes: number;
  no: number;
  members: number;
  state: "pending" | "accepted" | "rejected";
}

export type NodeEvent = StatusEvent | InboundEvent | ProposalEvent | TallyEvent;

export interface NodeStatus {
  ok: boolean;
  peer_id: string;
  endpoint: string;
  rendezvous: boolean;
  dht_peers: number;
  epoch: number | null;
  members: number;
}

export interface HistoryRecord {
  dir: "in" | "out";
  peer: string;
  text: string;
  ts: number;
  path: "direct" | "dmq";
  msg_id: string;
}

export interface ProposalRow {
  proposal: string;
  kind: string;
  subject: string;
  deadline: number;
  yes: number;
  no: number;
  members: number;
  state: "pending" | "accepted" | "rejected";
  applied: boolean;
  my_vote: "yes" | "no" | null;
}

export interface ContactRow {
  peer: string;
  name: string | null;
  keys: boolean;
}

export function isNodeEvent(obj: unknown): obj is NodeEvent {
  if (typeof obj !== "object" || obj === null) return false;
  const op = (obj as { op?: unknown }).op;
  return op === "status" || op === "inbound" || op === "proposal" || op === "tally";
}
