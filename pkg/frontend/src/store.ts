// UI state as a pure fold over node data. Nothing in here is invented by
// the client: bubbles come from history records, send responses, and
// inbound events; proposal cards from proposal listings and tally events.
// Closing the UI loses nothing because this store can always be rebuilt.

import {
  HistoryRecord,
  InboundEvent,
  ProposalEvent,
  ProposalRow,
  StatusEvent,
  TallyEvent,
} from "./protocol.js";

export interface Bubble {
  direction: "in" | "out";
  text: string;
  timestamp: number;
  path: "direct" | "dmq" | null;
  state: string; // pending | sent_direct | queued | delivered | failed | ""
  msgId: string;
  error?: string;
}

export interface Conversation {
  peer: string;
  bubbles: Bubble[];
}

export interface ProposalCard {
  proposal: string;
  kind: string;
  subject: string;
  deadline: number;
  yes: number;
  no: number;
  members: number;
  state: "pending" | "accepted" | "rejected";
  myVote: "yes" | "no" | null;
}

export class Store {
  conversations = new Map<string, Conversation>();
  proposals = new Map<string, ProposalCard>();
  private byMsgId = new Map<string, Bubble>();

  onChange: (() => void) | null = null;

  private conversation(peer: string): Conversation {
    let conv = this.conversations.get(peer);
    if (!conv) {
      conv = { peer, bubbles: [] };
      this.conversations.set(peer, conv);
    }
    return conv;
  }

  private notify(): void {
    if (this.onChange) this.onChange();
  }

  private insert(peer: string, bubble: Bubble): void {
    if (this.byMsgId.has(bubble.msgId)) return; // re-fetches never duplicate
    this.byMsgId.set(bubble.msgId, bubble);
    const conv = this.conversation(peer);
    conv.bubbles.push(bubble);
    conv.bubbles.sort((a, b) => a.timestamp - b.timestamp);
  }

  loadHistory(records: HistoryRecord[]): void {
    for (const rec of records) {
      this.insert(rec.peer, {
        direction: rec.dir,
        text: rec.text,
        timestamp: rec.ts,
        path: rec.path,
        state: rec.dir === "out" ? "sent" : "",
        msgId: rec.msg_id,
      });
    }
    this.notify();
  }

  /** An outbound message accepted by the composer, before the node replies. */
  addOutgoing(peer: string, text: string, msgId: string, timestamp: number): void {
    this.insert(peer, {
      direction: "out",
      text,
      timestamp,
      path: null,
      state: "pending",
      msgId,
    });
    this.notify();
  }

  applyStatus(event: StatusEvent): void {
    const bubble = this.byMsgId.get(event.msg_id);
    if (!bubble) return;
    bubble.state = event.state;
    if (event.state === "sent_direct") bubble.path = "direct";
    if (event.state === "queued") bubble.path = "dmq";
    if (event.error) bubble.error = event.error;
    this.notify();
  }

  applyInbound(event: InboundEvent): void {
    this.insert(event.from, {
      direction: "in",
      text: event.text,
      timestamp: event.received_at,
      path: event.path,
      state: "",
      msgId: event.msg_id,
    });
    this.notify();
  }

  loadProposals(rows: ProposalRow[]): void {
    for (const row of rows) {
      this.proposals.set(row.proposal, {
        proposal: row.proposal,
        kind: row.kind,
        subject: row.subject,
        deadline: row.deadline,
        yes: row.yes,
        no: row.no,
        members: row.members,
        state: row.state,
        myVote: row.my_vote,
      });
    }
    this.notify();
  }

  applyProposal(event: ProposalEvent): void {
    if (!this.proposals.has(event.proposal)) {
      this.proposals.set(event.proposal, {
        proposal: event.proposal,
        kind: event.kind,
        subject: event.subject,
        deadline: event.deadline,
        yes: 0,
        no: 0,
        members: 0,
        state: "pending",
        myVote: null,
      });
    }
    this.notify();
  }

  applyTally(event: TallyEvent): void {
    const card = this.proposals.get(event.proposal);
    if (!card) return;
    card.yes = event.yes;
    card.no = event.no;
    card.members = event.members;
    card.state = event.state;
    this.notify();
  }

  /** First cast locks the card; mirrors the node's first-vote-binds rule. */
  markVoted(proposal: string, choice: "yes" | "no"): boolean {
    const card = this.proposals.get(proposal);
    if (!card || card.myVote !== null) return false;
    card.myVote = choice;
    this.notify();
    return true;
  }

  pendingProposals(): ProposalCard[] {
    return [...this.proposals.values()]
      .filter((p) => p.state === "pending")
      .sort((a, b) => a.deadline - b.deadline);
  }

  decidedProposals(): ProposalCard[] {
    return [...this.proposals.values()]
      .filter((p) => p.state !== "pending")
      .sort((a, b) => b.deadline - a.deadline);
  }
}
