// Dashboard: review-state tallies, domain distribution bars, and an upload
// slot that renders a similarity report JSON as a 4-decimal table with
// per-question maxima highlighted.

import { ApiClient, StatsView } from "./api.js";
import { ReportSchemaError, distributionBarsHtml, parseReport, reportTableHtml } from "./format.js";

interface DashboardApi {
  stats: ApiClient["stats"];
}

export class DashboardScreen {
  private stats: StatsView | null = null;
  private reportHtml = "";
  private notice = "";

  constructor(
    private root: HTMLElement,
    private api: DashboardApi,
  ) {}

  async mount(): Promise<void> {
    try {
      this.stats = await this.api.stats();
      this.notice = "";
    } catch {
      this.notice = "cannot reach the review service";
    }
    this.render();
  }

  loadReport(json: string): void {
    try {
      this.reportHtml = reportTableHtml(parseReport(json));
      this.notice = "";
    } catch (error) {
      this.reportHtml = "";
      this.notice =
        error instanceof ReportSchemaError
          ? `report schema error: ${error.message}`
          : "could not read the report file";
    }
    this.render();
  }

  render(): void {
    const notice = this.notice ? `<div class="notice" data-role="notice">${this.notice}</div>` : "";
    let tallies = "";
    let bars = "";
    if (this.stats) {
      tallies = Object.entries(this.stats.review_states)
        .map(
          ([state, count]) =>
            `<div class="tally"><span class="tally-count" data-state="${state}">${count}</span> ${state}</div>`,
        )
        .join("");
      bars = distributionBarsHtml(this.stats.domains.counts, this.stats.domains.total);
    }
    this.root.innerHTML = `
      ${notice}
      <section><h3>Review states</h3><div class="tallies" data-role="tallies">${tallies}</div></section>
      <section><h3>Domain distribution</h3><div data-role="distribution">${bars}</div></section>
      <section>
        <h3>Similarity report</h3>
        <input type="file" accept=".json,application/json" data-role="report-input" />
        <div data-role="report">${this.reportHtml}</div>
      </section>`;
    this.bind();
  }

  private bind(): void {
    const input = this.root.querySelector('[data-role="report-input"]') as HTMLInputElement | null;
    input?.addEventListener("change", () => {
      const file = input.files?.[0];
      if (!file) {
        return;
      }
      void file.text().then((content) => this.loadReport(content));
    });
  }
}
