// Typed client for the review service JSON API. All requests go to the
// configured service origin; no credentials live in this bundle.

export interface QaPairView {
  qa_id: string;
  question: string;
  answer: string;
  doc_id: string;
  segment_index: number;
  template_id: string;
  provider_id: string;
  model_name: string;
  domain: string;
  review_state: string;
  edited_question: string | null;
  edited_answer: string | null;
  context?: string | null;
}

export interface QueuePage {
  items: QaPairView[];
  total: number;
}

export interface SessionEntryView {
  anon_label: string;
  answer_text: string;
}

export interface SessionView {
  session_id: string;
  question: string;
  status: "open" | "finalized";
  entries: SessionEntryView[];
  composed_benchmark?: string;
  finalized_at?: string;
}

export interface StatsView {
  review_states: Record<string, number>;
  domains: { counts: Record<string, number>; total: number };
}

export type DecisionKind = "accept" | "edit" | "reject";

export interface DecisionBody {
  qa_id: string;
  decision: DecisionKind;
  edited_question?: string | null;
  edited_answer?: string | null;
  reviewer_id: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function asApiError(response: Response): Promise<ApiError> {
  let code = `http_${response.status}`;
  let message = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body === "object") {
      code = body.code ?? code;
      message = body.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, message);
}

export class ApiClient {
  constructor(
    private origin: string = "",
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.origin + path, init);
    if (!response.ok) {
      throw await asApiError(response);
    }
    return (await response.json()) as T;
  }

  queue(state = "pending", limit = 20, offset = 0): Promise<QueuePage> {
    const params = new URLSearchParams({
      state,
      limit: String(limit),
      offset: String(offset),
    });
    return this.request<QueuePage>(`/api/review/queue?${params}`);
  }

  decide(body: DecisionBody): Promise<QaPairView> {
    return this.request<QaPairView>("/api/review/decide", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  stats(): Promise<StatsView> {
    return this.request<StatsView>("/api/stats");
  }

  sessions(status?: "open" | "finalized"): Promise<{ sessions: SessionView[] }> {
    const suffix = status ? `?status=${status}` : "";
    return this.request<{ sessions: SessionView[] }>(`/api/sessions${suffix}`);
  }

  session(sessionId: string): Promise<SessionView> {
    return this.request<SessionView>(`/api/sessions/${sessionId}`);
  }

  finalize(sessionId: string, composedAnswer: string): Promise<unknown> {
    return this.request(`/api/sessions/${sessionId}/finalize`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ composed_answer: composedAnswer }),
    });
  }

  unmask(sessionId: string): Promise<{ session_id: string; mapping: Record<string, string> }> {
    return this.request(`/api/sessions/${sessionId}/unmask`);
  }
}
