/** Live run monitor: long-polls the event feed with a seq cursor, retries
 * with backoff on transport loss, and verifies the stream stays gap-free. */

import type { ConsoleApi } from './api.js';
import type { EventDoc, RunSummaryDoc } from './types.js';

export class EventGapError extends Error {
  constructor(expected: number, got: number) {
    super(`event feed gap: expected seq ${expected}, got ${got}`);
    this.name = 'EventGapError';
  }
}

export interface MonitorOptions {
  waitSeconds?: number;
  maxRetries?: number;
  backoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class RunMonitor {
  readonly events: EventDoc[] = [];
  private cursor = -1;

  constructor(
    private readonly api: ConsoleApi,
    private readonly projectId: string,
    private readonly options: MonitorOptions = {},
  ) {}

  get lastSeq(): number {
    return this.cursor;
  }

  /** One poll; appends fresh events and advances the cursor. Transport
   * failures are retried with backoff, and the cursor guarantees nothing
   * is lost across a reconnect. */
  async poll(): Promise<EventDoc[]> {
    const { waitSeconds = 0, maxRetries = 3, backoffMs = 50, sleep = defaultSleep } =
      this.options;
    let lastError: unknown;
    for (let attempt = 0; attempt <= maxRetries; attempt += 1) {
      try {
        const page = await this.api.events(this.projectId, this.cursor, waitSeconds);
        for (const event of page.events) {
          if (event.seq !== this.cursor + 1) {
            throw new EventGapError(this.cursor + 1, event.seq);
          }
          this.events.push(event);
          this.cursor = event.seq;
        }
        return page.events;
      } catch (error) {
        if (error instanceof EventGapError) throw error;
        lastError = error;
        await sleep(backoffMs * 2 ** attempt);
      }
    }
    throw lastError;
  }

  /** Poll until the predicate holds on the project's event stream. */
  async pollUntil(done: (events: EventDoc[]) => boolean, maxPolls = 200): Promise<void> {
    for (let i = 0; i < maxPolls; i += 1) {
      await this.poll();
      if (done(this.events)) return;
    }
    throw new Error('monitor gave up waiting');
  }

  isGapFree(): boolean {
    return this.events.every((e, i) => e.seq === i);
  }
}

export interface SummaryCard {
  tasks: number;
  commands: number;
  tracebacks: number;
  digest: Record<string, number>;
  taskStatus: Record<string, string>;
}

/** Copy the summary payload for display; no client-side recomputation. */
export function buildSummaryCard(summary: RunSummaryDoc): SummaryCard {
  return {
    tasks: summary.tasks,
    commands: summary.commands,
    tracebacks: summary.tracebacks,
    digest: { ...summary.digest },
    taskStatus: { ...summary.task_status },
  };
}

export interface LogLine {
  seq: number;
  author: string;
  stage: string;
  text: string;
}

export function renderEventLine(event: EventDoc): LogLine {
  const payload = event.payload as Record<string, unknown> | null;
  let text: string;
  switch (event.stage) {
    case 'transition':
      text = `${payload?.['from']} -> ${payload?.['to']}`;
      break;
    case 'selection':
      text = `task ${payload?.['task_id']} unit ${payload?.['unit']}: candidate ${payload?.['selected']}`;
      break;
    case 'summary':
      text = `run complete: ${payload?.['tasks']} tasks, ${payload?.['tracebacks']} tracebacks`;
      break;
    default:
      text = JSON.stringify(payload);
  }
  return { seq: event.seq, author: event.author, stage: event.stage, text };
}
