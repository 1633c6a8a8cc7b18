// Typed client for the annotation service JSON API.

export interface Task {
  task_id: string;
  batch: number;
  probe_id: string;
  gallery_id: string;
  state: "pending" | "labeled" | "skipped";
  label: number | null;
  probe_image_url: string | null;
  gallery_image_url: string | null;
  probe_feature: number[] | null;
  gallery_feature: number[] | null;
}

export interface BatchProgress {
  batch: number;
  total: number;
  labeled: number;
  skipped: number;
  pending: number;
}

export interface CheckpointInfo {
  batch: number;
  labeled_percent: number;
  rank1: number;
  map: number;
}

export interface Status {
  session_id: string;
  phase: "ready" | "updating";
  dataset: string;
  num_batches: number;
  batches_consumed: number;
  current_batch: number | null;
  batch_progress: BatchProgress | null;
  effort: { labeled_pairs: number; total_pairs: number; percent: number };
  checkpoints: CheckpointInfo[];
}

export interface ReportRow {
  checkpoint: number;
  labeled_pairs: number;
  labeled_percent: number;
  cmc: number[];
  map: number;
  excluded_probes: number;
}

export interface Report {
  session_id: string;
  rows: ReportRow[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  url(path: string): string {
    return `${this.base}${path}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.url(path), init);
    } catch (err) {
      throw new ApiError(0, `network failure: ${String(err)}`);
    }
    if (!response.ok) {
      const body = await response.text().catch(() => "");
      throw new ApiError(response.status, body || response.statusText);
    }
    return (await response.json()) as T;
  }

  createSession(manifest: string, config: Record<string, unknown> = {}): Promise<{ session_id: string; status: string }> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ manifest, config }),
    });
  }

  getStatus(sessionId: string): Promise<Status> {
    return this.request(`/sessions/${sessionId}/status`);
  }

  getTasks(sessionId: string, batch: number): Promise<Task[]> {
    return this.request(`/sessions/${sessionId}/tasks?batch=${batch}`);
  }

  submitLabel(sessionId: string, taskId: string, label: 1 | -1): Promise<{ task: Task; batch_pending: number }> {
    return this.request(`/sessions/${sessionId}/tasks/${taskId}/label`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ label, source: "human" }),
    });
  }

  getReport(sessionId: string): Promise<Report> {
    return this.request(`/sessions/${sessionId}/report`);
  }
}
