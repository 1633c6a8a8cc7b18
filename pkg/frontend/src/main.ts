// Panel bootstrap: session polling, task rendering, keyboard shortcuts,
// and the adaptation dashboard.  All state lives on the server; a hard
// refresh reconstructs everything from the status/tasks/report endpoints.

import { ApiClient, Status } from "./api.js";
import { chartSvg, buildSeries } from "./dashboard.js";
import { barsToSvg } from "./featurebar.js";
import { TaskQueueController } from "./queue.js";

const POLL_MS = 800;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function sideHtml(title: string, imageUrl: string | null, feature: number[] | null): string {
  const body = imageUrl
    ? `<img src="${imageUrl}" alt="${title}"/>`
    : feature
      ? `<div class="featurebar">${barsToSvg(feature, 260, 90)}</div>`
      : `<div class="missing">no preview</div>`;
  return `<figure><figcaption>${title}</figcaption>${body}</figure>`;
}

export class Panel {
  private api: ApiClient;
  private queue: TaskQueueController;
  private status: Status | null = null;
  private lastCheckpoints = -1;
  private timer: number | null = null;

  constructor(private sessionId: string, base = "") {
    this.api = new ApiClient(base);
    this.queue = new TaskQueueController(this.api, sessionId);
  }

  start(): void {
    this.bindInputs();
    void this.tick();
    this.timer = window.setInterval(() => void this.tick(), POLL_MS);
  }

  stop(): void {
    if (this.timer !== null) window.clearInterval(this.timer);
  }

  private bindInputs(): void {
    el<HTMLButtonElement>("btn-same").addEventListener("click", () => void this.decide(1));
    el<HTMLButtonElement>("btn-diff").addEventListener("click", () => void this.decide(-1));
    el<HTMLButtonElement>("btn-retry").addEventListener("click", () => void this.retry());
    window.addEventListener("keydown", (ev) => {
      if (ev.key === "s" || ev.key === "S") void this.decide(1);
      if (ev.key === "d" || ev.key === "D") void this.decide(-1);
    });
  }

  private async decide(label: 1 | -1): Promise<void> {
    if (this.queue.activeTask() === null) return;
    this.renderButtons(true);
    await this.queue.decide(label);
    this.renderQueue();
  }

  private async retry(): Promise<void> {
    this.renderButtons(true);
    await this.queue.retry();
    this.renderQueue();
  }

  private async tick(): Promise<void> {
    try {
      this.status = await this.api.getStatus(this.sessionId);
      el("conn").textContent = "";
    } catch (err) {
      el("conn").textContent = `service unreachable, retrying (${String(err)})`;
      return;
    }
    const st = this.status;
    el("phase").textContent = st.phase;
    el("effort").textContent =
      `${st.effort.labeled_pairs} / ${st.effort.total_pairs} pairs labeled ` +
      `(${st.effort.percent.toFixed(1)}%)`;

    if (st.checkpoints.length !== this.lastCheckpoints) {
      this.lastCheckpoints = st.checkpoints.length;
      await this.renderDashboard();
    }

    const snap = this.queue.snapshot();
    if (st.phase === "ready" && st.current_batch !== null &&
        (snap.batch !== st.current_batch || snap.complete)) {
      try {
        await this.queue.loadBatch(st.current_batch);
      } catch {
        return; // batch not ready yet (e.g. update still finishing)
      }
    }
    this.renderQueue();
  }

  private async renderDashboard(): Promise<void> {
    try {
      const report = await this.api.getReport(this.sessionId);
      const series = buildSeries(report);
      el("chart").innerHTML = chartSvg(series);
      el("chart-caption").textContent =
        `rank-1 ${series.cmc1.map((v) => v.toFixed(2)).join(" -> ")}` +
        ` | effort % ${series.effortPercent.map((v) => v.toFixed(1)).join(" -> ")}`;
    } catch {
      /* dashboard refresh is best-effort */
    }
  }

  private renderButtons(disabled: boolean): void {
    el<HTMLButtonElement>("btn-same").disabled = disabled;
    el<HTMLButtonElement>("btn-diff").disabled = disabled;
  }

  private renderQueue(): void {
    const st = this.status;
    const snap = this.queue.snapshot();
    const banner = el("banner");
    banner.hidden = snap.networkError === null;
    if (snap.networkError !== null) {
      el("banner-text").textContent = `submission failed: ${snap.networkError}`;
    }

    const pair = el("pair");
    const stateLine = el("state-line");
    const active = snap.activeIndex !== null ? snap.tasks[snap.activeIndex] : null;

    if (st && st.current_batch === null) {
      pair.innerHTML = "";
      stateLine.textContent = "all batches consumed - adaptation finished";
      this.renderButtons(true);
      return;
    }
    if (st && st.phase === "updating") {
      pair.innerHTML = "";
      stateLine.textContent = "batch complete, model updating";
      this.renderButtons(true);
      return;
    }
    if (!active) {
      pair.innerHTML = "";
      stateLine.textContent = snap.batch === null ? "loading tasks" : "batch complete, model updating";
      this.renderButtons(true);
      return;
    }
    const t = active.task;
    pair.innerHTML =
      sideHtml(`probe ${t.probe_id}`, t.probe_image_url, t.probe_feature) +
      sideHtml(`gallery ${t.gallery_id}`, t.gallery_image_url, t.gallery_feature);
    stateLine.textContent =
      `batch ${snap.batch}: ${this.queue.pendingCount()} of ${snap.tasks.length} pairs left` +
      (active.state === "conflict" ? " (already labeled elsewhere; server kept its label)" : "");
    this.renderButtons(snap.submitting);
  }
}

export function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get("session");
  if (!sessionId) {
    document.body.innerHTML =
      "<p class='missing'>append ?session=&lt;session id&gt; to the URL</p>";
    return;
  }
  new Panel(sessionId).start();
}

if (typeof document !== "undefined" && document.getElementById("pair")) {
  boot();
}
