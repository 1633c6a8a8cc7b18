// Task queue state machine: one active task at a time, optimistic submits
// reconciled with the server's answer, and no input lost on network failure.

import { ApiClient, ApiError, Task } from "./api.js";

export type Decision = 1 | -1;

export interface QueueTask {
  task: Task;
  state: "pending" | "submitting" | "labeled" | "conflict";
  decision: Decision | null;
}

export interface QueueSnapshot {
  batch: number | null;
  tasks: QueueTask[];
  activeIndex: number | null;
  submitting: boolean;
  networkError: string | null;
  complete: boolean;
}

export class TaskQueueController {
  private batch: number | null = null;
  private tasks: QueueTask[] = [];
  private submitting = false;
  private networkError: string | null = null;

  constructor(private api: ApiClient, private sessionId: string) {}

  snapshot(): QueueSnapshot {
    return {
      batch: this.batch,
      tasks: this.tasks.map((t) => ({ ...t })),
      activeIndex: this.activeIndex(),
      submitting: this.submitting,
      networkError: this.networkError,
      complete: this.batch !== null && this.activeIndex() === null,
    };
  }

  activeIndex(): number | null {
    for (let i = 0; i < this.tasks.length; i++) {
      const state = this.tasks[i].state;
      if (state === "pending" || state === "submitting") return i;
    }
    return null;
  }

  activeTask(): QueueTask | null {
    const idx = this.activeIndex();
    return idx === null ? null : this.tasks[idx];
  }

  pendingCount(): number {
    return this.tasks.filter((t) => t.state === "pending" || t.state === "submitting").length;
  }

  async loadBatch(batch: number): Promise<QueueSnapshot> {
    const tasks = await this.api.getTasks(this.sessionId, batch);
    this.batch = batch;
    this.tasks = tasks.map((task) => ({ task, state: "pending" as const, decision: null }));
    this.networkError = null;
    return this.snapshot();
  }

  /** Submit a decision for the active task.  Exactly one submit_label call
   *  is made per accepted decision; repeated calls while a submission is in
   *  flight are ignored.  A conflict means the server already holds a label:
   *  the server wins and the task is flagged.  A network failure keeps the
   *  decision so retry() can resend it without a second user input. */
  async decide(label: Decision): Promise<QueueSnapshot> {
    const active = this.activeTask();
    if (!active || this.submitting) return this.snapshot();
    active.decision = label;
    return this.submitActive();
  }

  async retry(): Promise<QueueSnapshot> {
    const active = this.activeTask();
    if (!active || this.submitting || active.decision === null) return this.snapshot();
    return this.submitActive();
  }

  private async submitActive(): Promise<QueueSnapshot> {
    const active = this.activeTask();
    if (!active || active.decision === null) return this.snapshot();
    this.submitting = true;
    active.state = "submitting";
    try {
      const ack = await this.api.submitLabel(this.sessionId, active.task.task_id, active.decision);
      active.state = "labeled";
      active.task = ack.task;
      this.networkError = null;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone labeled it first; the server's label stands
        active.state = "conflict";
        this.networkError = null;
      } else if (err instanceof ApiError && err.status === 0) {
        active.state = "pending"; // decision kept for retry
        this.networkError = err.message;
      } else {
        active.state = "pending";
        this.networkError = err instanceof Error ? err.message : String(err);
      }
    } finally {
      this.submitting = false;
    }
    return this.snapshot();
  }
}
