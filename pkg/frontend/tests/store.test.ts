import { describe, expect, it } from "vitest";

import { Store } from "../src/store.js";

const PEER = "ab".repeat(32);

describe("conversation state", () => {
  it("renders bubbles in timestamp order regardless of arrival order", () => {
    const store = new Store();
    store.applyInbound({
      op: "inbound", from: PEER, text: "second", path: "dmq", received_at: 200, msg_id: "m2",
    });
    store.applyInbound({
      op: "inbound", from: PEER, text: "first", path: "direct", received_at: 100, msg_id: "m1",
    });
    const conv = store.conversations.get(PEER)!;
    expect(conv.bubbles.map((b) => b.text)).toEqual(["first", "second"]);
  });

  it("never renders duplicates when history is re-fetched", () => {
    const store = new Store();
    const records = [
      { dir: "in" as const, peer: PEER, text: "hello", ts: 1, path: "direct" as const, msg_id: "m1" },
    ];
    store.loadHistory(records);
    store.loadHistory(records);
    store.applyInbound({
      op: "inbound", from: PEER, text: "hello", path: "direct", received_at: 1, msg_id: "m1",
    });
    expect(store.conversations.get(PEER)!.bubbles).toHaveLength(1);
  });

  it("walks the optimistic bubble through its states", () => {
    const store = new Store();
    store.addOutgoing(PEER, "yo", "m9", 50);
    const bubble = store.conversations.get(PEER)!.bubbles[0];
    expect(bubble.state).toBe("pending");
    store.applyStatus({ op: "status", msg_id: "m9", state: "sent_direct" });
    expect(bubble.state).toBe("sent_direct");
    expect(bubble.path).toBe("direct");
    store.applyStatus({ op: "status", msg_id: "m9", state: "delivered" });
    expect(bubble.state).toBe("delivered");
  });

  it("marks queued messages with the dmq badge and failures with the error", () => {
    const store = new Store();
    store.addOutgoing(PEER, "later", "m3", 10);
    store.applyStatus({ op: "status", msg_id: "m3", state: "queued" });
    expect(store.conversations.get(PEER)!.bubbles[0].path).toBe("dmq");
    store.addOutgoing(PEER, "nope", "m4", 20);
    store.applyStatus({ op: "status", msg_id: "m4", state: "failed", error: "no route" });
    const failed = store.conversations.get(PEER)!.bubbles[1];
    expect(failed.state).toBe("failed");
    expect(failed.error).toBe("no route");
  });
});

describe("proposal cards", () => {
  it("locks after the first vote, mirroring the node's rule", () => {
    const store = new Store();
    store.loadProposals([
      {
        proposal: "p1", kind: "ADD_MEMBER", subject: PEER, deadline: 99,
        yes: 0, no: 0, members: 1, state: "pending", applied: false, my_vote: null,
      },
    ]);
    expect(store.markVoted("p1", "yes")).toBe(true);
    expect(store.markVoted("p1", "no")).toBe(false);
    expect(store.proposals.get("p1")!.myVote).toBe("yes");
  });

  it("updates tallies from node events and moves decided cards to history", () => {
    const store = new Store();
    store.applyProposal({ op: "proposal", proposal: "p2", kind: "SET_POLICY", subject: "k=v", deadline: 500 });
    expect(store.pendingProposals()).toHaveLength(1);
    store.applyTally({ op: "tally", proposal: "p2", yes: 1, no: 0, members: 1, state: "accepted" });
    expect(store.pendingProposals()).toHaveLength(0);
    const decided = store.decidedProposals();
    expect(decided).toHaveLength(1);
    expect(decided[0].state).toBe("accepted");
    expect(decided[0].yes).toBe(1);
  });
});
