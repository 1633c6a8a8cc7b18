// Round trip against the real annotation service: a scripted session labels a
// full synthetic batch through the panel's queue controller, the service
// transitions ready -> updating -> ready, every click lands in the label log
// exactly once, and the dashboard series gains its second point.
//
// Skips when the python service cannot be spawned in this environment.

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { buildSeries } from "../src/dashboard.js";
import { TaskQueueController } from "../src/queue.js";

const PYTHON = process.env.REIDLOOP_PYTHON ?? "python3";
const PORT = 8763;
const BASE = `http://127.0.0.1:${PORT}`;

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function serviceAvailable(): boolean {
  const probe = spawnSync(PYTHON, ["-c", "import reidloop"], { timeout: 30_000 });
  return probe.status === 0;
}

const available = serviceAvailable();
const maybe = available ? describe : describe.skip;
if (!available) {
  console.warn("reidloop python package not importable; skipping service round trip");
}

maybe("service round trip", () => {
  let server: ChildProcess;
  let workdir: string;
  let dataDir: string;

  beforeAll(async () => {
    workdir = mkdtempSync(join(tmpdir(), "reidloop-ui-"));
    dataDir = join(workdir, "sessions");
    const synth = spawnSync(PYTHON, [
      "-m", "reidloop.cli", "synth", "--out", join(workdir, "data"),
      "--ids", "12", "--dim", "8", "--images", "1", "--seed", "11",
    ], { timeout: 60_000 });
    expect(synth.status).toBe(0);

    server = spawn(PYTHON, [
      "-m", "reidloop.cli", "serve", "--port", String(PORT),
      "--data-dir", dataDir,
    ], { stdio: "ignore" });
    for (let i = 0; i < 100; i++) {
      try {
        const r = await fetch(`${BASE}/api`);
        if (r.ok) return;
      } catch {
        /* not up yet */
      }
      await sleep(200);
    }
    throw new Error("service did not come up");
  }, 60_000);

  afterAll(() => {
    server?.kill();
  });

  it("labels a full batch through the panel controller", async () => {
    const api = new ApiClient(BASE);
    const created = await api.createSession(join(workdir, "data", "manifest.json"), {
      offline_epochs: 12,
      update_epochs: 6,
      num_batches: 2,
      seed: 0,
    });
    const sid = created.session_id;

    let status = await api.getStatus(sid);
    expect(status.phase).toBe("ready");
    expect(status.checkpoints).toHaveLength(1);
    expect(buildSeries(await api.getReport(sid)).cmc1).toHaveLength(1);

    const queue = new TaskQueueController(api, sid);
    const snap = await queue.loadBatch(2);
    expect(snap.tasks.length).toBeGreaterThan(0);

    // scripted "clicks": ground truth is identity equality on synthetic data
    const clicks: Array<[string, string]> = [];
    while (!queue.snapshot().complete) {
      const active = queue.activeTask()!;
      const label = active.task.probe_id === active.task.gallery_id ? 1 : -1;
      clicks.push([active.task.probe_id, active.task.gallery_id]);
      const after = await queue.decide(label as 1 | -1);
      expect(after.networkError).toBeNull();
    }

    // the service flips to updating once the last pending task resolves,
    // then returns to ready with a fresh checkpoint
    const phases = new Set<string>();
    for (let i = 0; i < 300; i++) {
      status = await api.getStatus(sid);
      phases.add(status.phase);
      if (status.phase === "ready" && status.batches_consumed === 2) break;
      await sleep(100);
    }
    expect(phases.has("updating")).toBe(true);
    expect(status.phase).toBe("ready");
    expect(status.batches_consumed).toBe(2);

    // every click appears in the label log exactly once
    const log = readFileSync(join(dataDir, sid, "labels.jsonl"), "utf-8")
      .trim().split("\n").map((line) => JSON.parse(line) as {
        probe_id: string; gallery_id: string; source: string; batch: number;
      });
    const clicked = log.filter((e) => e.batch === 2);
    const keys = clicked.map((e) => `${e.probe_id}|${e.gallery_id}`);
    expect(new Set(keys).size).toBe(keys.length);
    expect(keys.sort()).toEqual(clicks.map(([p, g]) => `${p}|${g}`).sort());
    expect(clicked.every((e) => e.source === "human")).toBe(true);

    // dashboard now shows a two-point series
    const series = buildSeries(await api.getReport(sid));
    expect(series.cmc1).toHaveLength(2);
    expect(series.effortPercent[1]).toBeGreaterThan(series.effortPercent[0]);
  }, 120_000);
});
