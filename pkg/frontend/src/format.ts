// Rendering helpers shared by the dashboard: similarity-report tables at
// fixed 4-decimal precision with per-question max highlighting, and domain
// distribution bars.

export interface SimilarityReport {
  questions: string[];
  models: string[]; // benchmark row first
  scores: number[][]; // [model][question]
  embed_provider: string;
}

export class ReportSchemaError extends Error {}

export function parseReport(json: string): SimilarityReport {
  let raw: unknown;
  try {
    raw = JSON.parse(json);
  } catch (error) {
    throw new ReportSchemaError(`not valid JSON: ${(error as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null) {
    throw new ReportSchemaError("report must be a JSON object");
  }
  const obj = raw as Record<string, unknown>;
  const { questions, models, scores } = obj;
  if (!Array.isArray(questions) || questions.some((q) => typeof q !== "string")) {
    throw new ReportSchemaError("questions must be a list of strings");
  }
  if (!Array.isArray(models) || models.some((m) => typeof m !== "string") || models.length === 0) {
    throw new ReportSchemaError("models must be a non-empty list of strings");
  }
  if (!Array.isArray(scores) || scores.length !== models.length) {
    throw new ReportSchemaError("scores must have one row per model");
  }
  for (const row of scores) {
    if (!Array.isArray(row) || row.length !== questions.length) {
      throw new ReportSchemaError("every score row must have one value per question");
    }
    for (const value of row) {
      if (typeof value !== "number" || value < -1 || value > 1) {
        throw new ReportSchemaError(`score ${String(value)} outside [-1, 1]`);
      }
    }
  }
  return {
    questions: questions as string[],
    models: models as string[],
    scores: scores as number[][],
    embed_provider: typeof obj.embed_provider === "string" ? obj.embed_provider : "",
  };
}

/**
 * Per question: indices of non-benchmark rows sharing the full-precision
 * maximum. Ties are marked jointly; rendering precision never changes the
 * choice because it is computed before formatting.
 */
export function maxMarks(report: SimilarityReport): Set<number>[] {
  const marks: Set<number>[] = [];
  for (let q = 0; q < report.questions.length; q += 1) {
    const mark = new Set<number>();
    if (report.models.length > 1) {
      let best = -Infinity;
      for (let m = 1; m < report.models.length; m += 1) {
        best = Math.max(best, report.scores[m][q]);
      }
      for (let m = 1; m < report.models.length; m += 1) {
        if (report.scores[m][q] === best) {
          mark.add(m);
        }
      }
    }
    marks.push(mark);
  }
  return marks;
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function reportTableHtml(report: SimilarityReport): string {
  const marks = maxMarks(report);
  const header = report.questions.map((q) => `<th>${escapeHtml(q)}</th>`).join("");
  const rows = report.models
    .map((model, m) => {
      const cells = report.scores[m]
        .map((value, q) => {
          const marked = marks[q].has(m);
          const text = value.toFixed(4);
          return `<td class="${marked ? "cell-max" : ""}">${marked ? "*" : ""}${text}</td>`;
        })
        .join("");
      return `<tr class="${m === 0 ? "benchmark-row" : ""}"><th>${escapeHtml(model)}</th>${cells}</tr>`;
    })
    .join("");
  return `<table class="report-table"><thead><tr><th></th>${header}</tr></thead><tbody>${rows}</tbody></table>`;
}

export function distributionBarsHtml(counts: Record<string, number>, total: number): string {
  const entries = Object.entries(counts);
  const peak = Math.max(1, ...entries.map(([, count]) => count));
  const bars = entries
    .map(([label, count]) => {
      const width = Math.round((count / peak) * 100);
      return (
        `<div class="bar-row"><span class="bar-label">${escapeHtml(label)}</span>` +
        `<div class="bar-track"><div class="bar-fill" style="width:${width}%"></div></div>` +
        `<span class="bar-count">${count}</span></div>`
      );
    })
    .join("");
  return `<div class="bars">${bars}<div class="bar-total">total ${total}</div></div>`;
}
