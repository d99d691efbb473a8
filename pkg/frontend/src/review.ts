// Review queue screen: one pending pair at a time with its source-segment
// context, keyboard-driven accept / edit / reject. Decisions go through the
// local-storage outbox so a network blip never drops one.

import { ApiClient, DecisionKind, QaPairView } from "./api.js";
import { DecisionOutbox } from "./outbox.js";

export function validateEdit(editedQuestion: string, editedAnswer: string): string | null {
  if (!editedQuestion.trim()) {
    return "edited question must not be empty";
  }
  if (!editedAnswer.trim()) {
    return "edited answer must not be empty";
  }
  return null;
}

interface ReviewApi {
  queue: ApiClient["queue"];
}

export class ReviewScreen {
  private items: QaPairView[] = [];
  private total = 0;
  private editing = false;
  private notice = "";

  constructor(
    private root: HTMLElement,
    private api: ReviewApi,
    private outbox: DecisionOutbox,
    private reviewerId: string = "expert",
  ) {}

  async mount(): Promise<void> {
    await this.refresh();
    this.root.addEventListener("keydown", (event) => this.onKey(event as KeyboardEvent));
  }

  async refresh(): Promise<void> {
    try {
      const page = await this.api.queue("pending", 20, 0);
      this.items = page.items;
      this.total = page.total;
      this.notice = "";
    } catch {
      this.notice = "cannot reach the review service";
    }
    this.render();
  }

  current(): QaPairView | undefined {
    return this.items[0];
  }

  private onKey(event: KeyboardEvent): void {
    if (this.editing || !this.current()) {
      return;
    }
    if (event.key === "a") {
      void this.submit("accept");
    } else if (event.key === "r") {
      void this.submit("reject");
    } else if (event.key === "e") {
      this.editing = true;
      this.render();
    }
  }

  async submit(decision: DecisionKind, editedQuestion?: string, editedAnswer?: string): Promise<void> {
    const item = this.current();
    if (!item) {
      return;
    }
    if (decision === "edit") {
      const problem = validateEdit(editedQuestion ?? "", editedAnswer ?? "");
      if (problem) {
        this.notice = problem;
        this.render();
        return;
      }
    }
    await this.outbox.submit({
      qa_id: item.qa_id,
      decision,
      edited_question: decision === "edit" ? editedQuestion : undefined,
      edited_answer: decision === "edit" ? editedAnswer : undefined,
      reviewer_id: this.reviewerId,
    });
    // Advance locally either way; an unsent decision is safe in the outbox.
    this.items.shift();
    this.total = Math.max(0, this.total - 1);
    this.editing = false;
    this.notice = "";
    if (this.items.length === 0) {
      await this.refresh();
    } else {
      this.render();
    }
  }

  async retryPending(): Promise<void> {
    await this.outbox.flush();
    await this.refresh();
  }

  render(): void {
    const item = this.current();
    const pendingUnsent = this.outbox.pendingCount();
    const banner = pendingUnsent
      ? `<div class="banner" data-role="retry-banner">` +
        `${pendingUnsent} decision(s) not yet delivered ` +
        `<button data-action="retry">retry now</button></div>`
      : "";
    const notice = this.notice ? `<div class="notice" data-role="notice">${this.notice}</div>` : "";

    if (!item) {
      this.root.innerHTML = `${banner}${notice}<p class="empty">No pending pairs. 🎉</p>`;
      this.bind();
      return;
    }

    const editor = this.editing
      ? `<div class="editor" data-role="editor">
           <label>Question <textarea data-role="edit-question">${escape_(item.question)}</textarea></label>
           <label>Answer <textarea data-role="edit-answer">${escape_(item.answer)}</textarea></label>
           <button data-action="save-edit">save edit</button>
           <button data-action="cancel-edit">cancel</button>
         </div>`
      : "";

    this.root.innerHTML = `
      ${banner}${notice}
      <div class="review-layout">
        <section class="pair-card" data-role="pair">
          <p class="meta">${this.total} pending · ${escape_(item.doc_id)}#${item.segment_index} · ${escape_(item.domain)}</p>
          <h3>Q</h3><p data-role="question">${escape_(item.question)}</p>
          <h3>A</h3><p data-role="answer">${escape_(item.answer)}</p>
          <div class="actions">
            <button data-action="accept" title="a">accept</button>
            <button data-action="edit" title="e">edit</button>
            <button data-action="reject" title="r">reject</button>
          </div>
          ${editor}
        </section>
        <aside class="context-card">
          <h3>Source segment</h3>
          <pre data-role="context">${escape_(item.context ?? "(no context stored)")}</pre>
        </aside>
      </div>`;
    this.bind();
  }

  private bind(): void {
    this.root.querySelector('[data-action="accept"]')?.addEventListener("click", () => {
      void this.submit("accept");
    });
    this.root.querySelector('[data-action="reject"]')?.addEventListener("click", () => {
      void this.submit("reject");
    });
    this.root.querySelector('[data-action="edit"]')?.addEventListener("click", () => {
      this.editing = true;
      this.render();
    });
    this.root.querySelector('[data-action="cancel-edit"]')?.addEventListener("click", () => {
      this.editing = false;
      this.render();
    });
    this.root.querySelector('[data-action="save-edit"]')?.addEventListener("click", () => {
      const question = (this.root.querySelector('[data-role="edit-question"]') as HTMLTextAreaElement).value;
      const answer = (this.root.querySelector('[data-role="edit-answer"]') as HTMLTextAreaElement).value;
      void this.submit("edit", question, answer);
    });
    this.root.querySelector('[data-action="retry"]')?.addEventListener("click", () => {
      void this.retryPending();
    });
  }
}

function escape_(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
