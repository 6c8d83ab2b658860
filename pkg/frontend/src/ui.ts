// DOM layer: renders the store, forwards user intent to the node, and
// reflects connection state. Everything hangs off one root element so the
// app works identically in a browser and under jsdom tests.

import { drawCumulative, drawScatter } from "./charts.js";
import { parseBenchCsv } from "./csv.js";
import {
  ContactRow,
  HistoryRecord,
  InboundEvent,
  NodeEvent,
  ProposalRow,
  StatusEvent,
} from "./protocol.js";
import { ApiSession, ConnectionState } from "./session.js";
import { Store } from "./store.js";

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function shortId(hex: string): string {
  return hex.slice(0, 12);
}

/** Fire-and-forget for UI handlers; connection loss is not a crash. */
function fire(promise: Promise<unknown>): void {
  void promise.catch(() => undefined);
}

export class App {
  store = new Store();
  peerId = "";
  selectedPeer: string | null = null;
  contacts: ContactRow[] = [];

  private doc: Document;
  private root: HTMLElement;
  private banner!: HTMLElement;
  private selfLabel!: HTMLElement;
  private contactList!: HTMLElement;
  private messageList!: HTMLElement;
  private composerInput!: HTMLInputElement;
  private composerButton!: HTMLButtonElement;
  private votesPanel!: HTMLElement;
  private benchError!: HTMLElement;
  private scatterCanvas!: HTMLCanvasElement;
  private cumulativeCanvas!: HTMLCanvasElement;

  constructor(root: HTMLElement, private session: ApiSession) {
    this.doc = root.ownerDocument;
    this.root = root;
    this.buildSkeleton();
    this.store.onChange = () => this.render();
    session.onEvent = (event) => this.onNodeEvent(event);
    session.onState = (state) => this.onConnectionState(state);
  }

  // ------------------------------------------------------------------- dom

  private buildSkeleton(): void {
    const doc = this.doc;
    this.root.textContent = "";

    const header = el(doc, "header", "header");
    this.banner = el(doc, "div", "banner disconnected", "connecting…");
    this.banner.id = "connection-banner";
    this.selfLabel = el(doc, "div", "self-id", "");
    this.selfLabel.id = "self-id";
    header.append(this.banner, this.selfLabel);

    const layout = el(doc, "div", "layout");

    const aside = el(doc, "aside", "contacts");
    aside.append(el(doc, "h2", undefined, "Contacts"));
    this.contactList = el(doc, "ul", "contact-list");
    this.contactList.id = "contact-list";
    const addForm = el(doc, "div", "contact-add");
    const peerInput = el(doc, "input");
    peerInput.id = "contact-peer";
    peerInput.placeholder = "peer id (64 hex)";
    const nameInput = el(doc, "input");
    nameInput.id = "contact-name";
    nameInput.placeholder = "name";
    const addButton = el(doc, "button", undefined, "add");
    addButton.id = "contact-add";
    addButton.addEventListener("click", () => {
      fire(this.addContact(peerInput.value.trim(), nameInput.value.trim()));
      peerInput.value = "";
      nameInput.value = "";
    });
    addForm.append(peerInput, nameInput, addButton);
    aside.append(this.contactList, addForm);

    const main = el(doc, "main", "chat");
    this.messageList = el(doc, "ul", "messages");
    this.messageList.id = "message-list";
    const composer = el(doc, "div", "composer");
    this.composerInput = el(doc, "input");
    this.composerInput.id = "composer-input";
    this.composerInput.placeholder = "type a message";
    this.composerButton = el(doc, "button", undefined, "send");
    this.composerButton.id = "composer-send";
    this.composerButton.addEventListener("click", () => fire(this.sendFromComposer()));
    this.composerInput.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter") fire(this.sendFromComposer());
    });
    composer.append(this.composerInput, this.composerButton);
    main.append(this.messageList, composer);

    const votes = el(doc, "section", "votes");
    votes.append(el(doc, "h2", undefined, "Swarm votes"));
    this.votesPanel = el(doc, "div", "votes-panel");
    this.votesPanel.id = "votes-panel";
    const proposeForm = el(doc, "div", "propose");
    const kindSelect = el(doc, "select");
    kindSelect.id = "propose-kind";
    for (const kind of [
      "ADD_MEMBER",
      "REMOVE_MEMBER",
      "PROMOTE_BOOTSTRAP",
      "DEMOTE_BOOTSTRAP",
    ]) {
      const option = el(doc, "option", undefined, kind);
      option.value = kind;
      kindSelect.append(option);
    }
    const subjectInput = el(doc, "input");
    subjectInput.id = "propose-subject";
    subjectInput.placeholder = "subject peer id";
    const proposeButton = el(doc, "button", undefined, "propose");
    proposeButton.id = "propose-submit";
    proposeButton.addEventListener("click", () =>
      fire(this.propose(kindSelect.value, subjectInput.value.trim())),
    );
    proposeForm.append(kindSelect, subjectInput, proposeButton);
    votes.append(this.votesPanel, proposeForm);

    const benchView = el(doc, "section", "bench");
    benchView.append(el(doc, "h2", undefined, "Benchmark viewer"));
    const fileInput = el(doc, "input");
    fileInput.id = "bench-file";
    fileInput.type = "file";
    fileInput.addEventListener("change", () => {
      const file = (fileInput as HTMLInputElement).files?.[0];
      if (file) fire(file.text().then((text) => this.renderBench(text)));
    });
    this.benchError = el(doc, "div", "bench-error");
    this.benchError.id = "bench-error";
    this.scatterCanvas = el(doc, "canvas");
    this.scatterCanvas.id = "bench-scatter";
    this.scatterCanvas.width = 640;
    this.scatterCanvas.height = 320;
    this.cumulativeCanvas = el(doc, "canvas");
    this.cumulativeCanvas.id = "bench-cumulative";
    this.cumulativeCanvas.width = 640;
    this.cumulativeCanvas.height = 320;
    benchView.append(fileInput, this.benchError, this.scatterCanvas, this.cumulativeCanvas);

    layout.append(aside, main, votes, benchView);
    this.root.append(header, layout);
  }

  // ------------------------------------------------------------ node wiring

  private onConnectionState(state: ConnectionState): void {
    this.banner.className = `banner ${state}`;
    this.banner.textContent =
      state === "connected"
        ? "connected"
        : state === "connecting"
          ? "connecting…"
          : "node unreachable — retrying";
    if (state === "connected") fire(this.refresh());
  }

  private onNodeEvent(event: NodeEvent): void {
    switch (event.op) {
      case "status":
        this.store.applyStatus(event as StatusEvent);
        break;
      case "inbound":
        this.store.applyInbound(event as InboundEvent);
        break;
      case "proposal":
        this.store.applyProposal(event);
        fire(this.refreshProposals());
        break;
      case "tally":
        this.store.applyTally(event);
        break;
    }
  }

  /** Pull everything the node knows; safe to repeat, renders no duplicates. */
  async refresh(): Promise<void> {
    const status = await this.session.request({ op: "status" });
    this.peerId = String(status.peer_id ?? "");
    this.selfLabel.textContent = `you: ${shortId(this.peerId)}`;
    const history = await this.session.request({ op: "history" });
    this.store.loadHistory((history.messages ?? []) as HistoryRecord[]);
    const contacts = await this.session.request({ op: "contacts", action: "list" });
    this.contacts = (contacts.contacts ?? []) as ContactRow[];
    await this.refreshProposals();
    this.render();
  }

  private async refreshProposals(): Promise<void> {
    const proposals = await this.session.request({ op: "proposals" });
    this.store.loadProposals((proposals.proposals ?? []) as ProposalRow[]);
  }

  async addContact(peer: string, name: string): Promise<void> {
    if (!/^[0-9a-f]{64}$/.test(peer)) return;
    const response = await this.session.request({
      op: "contacts",
      action: "add",
      peer,
      name: name || null,
    });
    this.contacts = (response.contacts ?? []) as ContactRow[];
    if (!this.selectedPeer) this.selectedPeer = peer;
    this.render();
  }

  async sendFromComposer(): Promise<void> {
    const text = this.composerInput.value;
    if (!text.trim() || !this.selectedPeer) return; // empty text never sends
    this.composerInput.value = "";
    const peer = this.selectedPeer;
    const response = await this.session.request({ op: "send", to: peer, text });
    const msgId = String(response.msg_id ?? "");
    if (msgId) {
      // the response carries the first state; the bubble exists from now on
      this.store.addOutgoing(peer, text, msgId, Date.now());
      this.store.applyStatus(response as unknown as StatusEvent);
    }
  }

  async propose(kind: string, subject: string): Promise<void> {
    if (!/^[0-9a-f]{64}$/.test(subject)) return;
    try {
      await this.session.request({ op: "propose", kind, subject });
    } catch {
      return;
    }
    await this.refreshProposals();
  }

  async castVote(proposal: string, choice: "yes" | "no"): Promise<void> {
    if (!this.store.markVoted(proposal, choice)) return; // first vote binds
    try {
      const response = await this.session.request({ op: "vote", proposal, choice });
      if (!response.ok) this.showVoteError(proposal, String(response.error ?? "vote failed"));
    } catch (err) {
      this.showVoteError(proposal, String(err));
    }
    await this.refreshProposals();
  }

  private showVoteError(proposal: string, message: string): void {
    const card = this.votesPanel.querySelector(`[data-proposal="${proposal}"]`);
    if (card) {
      const line = el(this.doc, "div", "vote-error", message);
      card.append(line);
    }
  }

  renderBench(text: string): void {
    try {
      const samples = parseBenchCsv(text);
      this.benchError.textContent = "";
      drawScatter(this.scatterCanvas, samples);
      drawCumulative(this.cumulativeCanvas, samples);
    } catch (err) {
      this.benchError.textContent = String(err instanceof Error ? err.message : err);
    }
  }

  // --------------------------------------------------------------- painting

  selectPeer(peer: string): void {
    this.selectedPeer = peer;
    this.render();
  }

  render(): void {
    this.renderContacts();
    this.renderConversation();
    this.renderVotes();
  }

  private renderContacts(): void {
    this.contactList.textContent = "";
    const peers = new Set<string>([
      ...this.contacts.map((c) => c.peer),
      ...this.store.conversations.keys(),
    ]);
    for (const peer of peers) {
      const contact = this.contacts.find((c) => c.peer === peer);
      const item = el(this.doc, "li", "contact", contact?.name || shortId(peer));
      item.dataset.peer = peer;
      if (peer === this.selectedPeer) item.classList.add("selected");
      item.addEventListener("click", () => this.selectPeer(peer));
      this.contactList.append(item);
    }
  }

  private renderConversation(): void {
    this.messageList.textContent = "";
    if (!this.selectedPeer) return;
    const conv = this.store.conversations.get(this.selectedPeer);
    if (!conv) return;
    for (const bubble of conv.bubbles) {
      const item = el(this.doc, "li", `bubble ${bubble.direction}`);
      item.dataset.msgId = bubble.msgId;
      item.append(el(this.doc, "span", "text", bubble.text));
      if (bubble.path) item.append(el(this.doc, "span", "badge", bubble.path));
      if (bubble.direction === "out") {
        item.append(el(this.doc, "span", "state", bubble.state));
        if (bubble.state === "failed") {
          const retry = el(this.doc, "button", "retry", "retry");
          retry.addEventListener("click", () => {
            this.composerInput.value = bubble.text;
          });
          item.append(retry);
        }
      }
      this.messageList.append(item);
    }
  }

  private renderVotes(): void {
    this.votesPanel.textContent = "";
    for (const card of this.store.pendingProposals()) {
      const box = el(this.doc, "div", "proposal-card pending");
      box.dataset.proposal = card.proposal;
      box.append(
        el(this.doc, "div", "kind", `${card.kind} ${shortId(card.subject)}`),
        el(this.doc, "div", "tally", `yes ${card.yes} / no ${card.no} of ${card.members}`),
        el(
          this.doc,
          "div",
          "deadline",
          `closes in ${Math.max(0, Math.round((card.deadline - Date.now()) / 1000))}s`,
        ),
      );
      if (card.myVote === null) {
        const yes = el(this.doc, "button", "vote-yes", "vote yes");
        yes.addEventListener("click", () => fire(this.castVote(card.proposal, "yes")));
        const no = el(this.doc, "button", "vote-no", "vote no");
        no.addEventListener("click", () => fire(this.castVote(card.proposal, "no")));
        box.append(yes, no);
      } else {
        box.append(el(this.doc, "div", "my-vote", `you voted ${card.myVote}`));
      }
      this.votesPanel.append(box);
    }
    for (const card of this.store.decidedProposals()) {
      const box = el(this.doc, "div", `proposal-card ${card.state}`);
      box.dataset.proposal = card.proposal;
      box.append(
        el(this.doc, "div", "kind", `${card.kind} ${shortId(card.subject)}`),
        el(this.doc, "div", "outcome", card.state),
        el(this.doc, "div", "tally", `yes ${card.yes} / no ${card.no} of ${card.members}`),
      );
      this.votesPanel.append(box);
    }
  }
}
