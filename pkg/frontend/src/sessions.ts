// Blind benchmark composition: anonymized answers side by side, a
// composition editor, and an unmask view that only works after finalize.
// The UI never requests the unmask endpoint while a session is open.

import { ApiClient, ApiError, SessionView } from "./api.js";

interface SessionsApi {
  sessions: ApiClient["sessions"];
  session: ApiClient["session"];
  finalize: ApiClient["finalize"];
  unmask: ApiClient["unmask"];
}

export class SessionsScreen {
  private openSessions: SessionView[] = [];
  private finalizedSessions: SessionView[] = [];
  private selected: SessionView | null = null;
  private notice = "";
  private unmaskRows: [string, string][] | null = null;

  constructor(
    private root: HTMLElement,
    private api: SessionsApi,
  ) {}

  async mount(): Promise<void> {
    await this.refresh();
  }

  async refresh(): Promise<void> {
    try {
      this.openSessions = (await this.api.sessions("open")).sessions;
      this.finalizedSessions = (await this.api.sessions("finalized")).sessions;
      this.notice = "";
    } catch {
      this.notice = "cannot reach the review service";
    }
    this.render();
  }

  async select(sessionId: string): Promise<void> {
    this.selected = await this.api.session(sessionId);
    this.unmaskRows = null;
    this.notice = "";
    this.render();
  }

  async finalize(composed: string): Promise<void> {
    if (!this.selected) {
      return;
    }
    if (!composed.trim()) {
      this.notice = "the composed benchmark answer must not be empty";
      this.render();
      return;
    }
    await this.api.finalize(this.selected.session_id, composed);
    await this.refresh();
    await this.select(this.selected.session_id);
  }

  async showUnmask(sessionId: string): Promise<void> {
    try {
      const result = await this.api.unmask(sessionId);
      this.unmaskRows = Object.entries(result.mapping);
      this.notice = "";
    } catch (error) {
      this.unmaskRows = null;
      this.notice =
        error instanceof ApiError && error.status === 409
          ? "not yet finalized"
          : "unmask failed";
    }
    this.render();
  }

  render(): void {
    const notice = this.notice ? `<div class="notice" data-role="notice">${esc(this.notice)}</div>` : "";
    const openList = this.openSessions
      .map(
        (s) =>
          `<li><a href="#" data-action="open-session" data-id="${esc(s.session_id)}">${esc(s.question)}</a></li>`,
      )
      .join("");
    const finalizedList = this.finalizedSessions
      .map(
        (s) =>
          `<li>${esc(s.question)} <a href="#" data-action="unmask" data-id="${esc(s.session_id)}">unmask</a></li>`,
      )
      .join("");

    let detail = "";
    if (this.selected) {
      const session = this.selected;
      const answers = session.entries
        .map(
          (entry) =>
            `<article class="anon-answer" data-role="anon-answer">` +
            `<h4>${esc(entry.anon_label)}</h4><p>${esc(entry.answer_text)}</p></article>`,
        )
        .join("");
      const composer =
        session.status === "open"
          ? `<div class="composer">
               <h3>Compose the benchmark answer</h3>
               <textarea data-role="composition" rows="6" placeholder="Synthesize the best answer from any fragments above"></textarea>
               <button data-action="finalize">finalize</button>
             </div>`
          : `<div class="finalized-note">finalized: <blockquote data-role="benchmark">${esc(
              session.composed_benchmark ?? "",
            )}</blockquote></div>`;
      detail = `
        <section class="session-detail" data-role="session-detail">
          <h2 data-role="session-question">${esc(session.question)}</h2>
          <div class="answers-grid">${answers}</div>
          ${composer}
        </section>`;
    }

    const unmaskTable = this.unmaskRows
      ? `<table class="unmask-table" data-role="unmask-table"><tbody>${this.unmaskRows
          .map(([label, model]) => `<tr><td>${esc(label)}</td><td>${esc(model)}</td></tr>`)
          .join("")}</tbody></table>`
      : "";

    this.root.innerHTML = `
      ${notice}
      <div class="sessions-layout">
        <aside>
          <h3>Open sessions</h3><ul data-role="open-list">${openList || "<li>(none)</li>"}</ul>
          <h3>Finalized</h3><ul data-role="finalized-list">${finalizedList || "<li>(none)</li>"}</ul>
        </aside>
        <main>${detail}${unmaskTable}</main>
      </div>`;
    this.bind();
  }

  private bind(): void {
    this.root.querySelectorAll('[data-action="open-session"]').forEach((element) => {
      element.addEventListener("click", (event) => {
        event.preventDefault();
        void this.select((element as HTMLElement).dataset.id ?? "");
      });
    });
    this.root.querySelectorAll('[data-action="unmask"]').forEach((element) => {
      element.addEventListener("click", (event) => {
        event.preventDefault();
        void this.showUnmask((element as HTMLElement).dataset.id ?? "");
      });
    });
    this.root.querySelector('[data-action="finalize"]')?.addEventListener("click", () => {
      const editor = this.root.querySelector('[data-role="composition"]') as HTMLTextAreaElement;
      void this.finalize(editor.value);
    });
  }
}

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
