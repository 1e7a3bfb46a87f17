/** Thin typed client over the pipeline API. The console mutates pipeline
 * state only through these documented POST endpoints. */

import type {
  EventsPage,
  ProjectDoc,
  RectificationBody,
  RunSummaryDoc,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = 'Unknown';
  let message = response.statusText;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body.detail && typeof body.detail === 'object' && !Array.isArray(body.detail)) {
      const detail = body.detail as { code?: string; message?: string };
      code = detail.code ?? code;
      message = detail.message ?? message;
    } else if (body.detail) {
      message = JSON.stringify(body.detail);
      code = 'ValidationError';
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, message);
}

export interface ProjectConfigOverrides {
  interactive?: boolean;
  k?: number;
  theta?: number;
  max_rounds?: number;
  backend?: { kind: string; fixtures?: string[] };
}

export class ConsoleApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { 'content-type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  createProject(
    text: string,
    options: { request_id?: string; config?: ProjectConfigOverrides } = {},
  ): Promise<ProjectDoc> {
    return this.request('POST', '/projects', { text, ...options });
  }

  getProject(projectId: string): Promise<ProjectDoc> {
    return this.request('GET', `/projects/${projectId}`);
  }

  advance(projectId: string): Promise<ProjectDoc> {
    return this.request('POST', `/projects/${projectId}/advance`);
  }

  rectifyPlan(projectId: string, rectification: RectificationBody): Promise<ProjectDoc> {
    return this.request('POST', `/projects/${projectId}/plan/rectify`, rectification);
  }

  approvePlan(projectId: string): Promise<ProjectDoc> {
    return this.request('POST', `/projects/${projectId}/plan/approve`);
  }

  submitArguments(
    projectId: string,
    taskId: number,
    values: Record<string, string | number>,
  ): Promise<ProjectDoc> {
    return this.request('POST', `/projects/${projectId}/tasks/${taskId}/arguments`, {
      values,
    });
  }

  pickCandidate(projectId: string, taskId: number, unit: number, index: number): Promise<ProjectDoc> {
    return this.request('POST', `/projects/${projectId}/tasks/${taskId}/candidate`, {
      unit,
      index,
    });
  }

  vetoCandidates(
    projectId: string,
    taskId: number,
    unit: number,
    veto: number[],
  ): Promise<ProjectDoc> {
    return this.request('POST', `/projects/${projectId}/tasks/${taskId}/candidate`, {
      unit,
      veto,
    });
  }

  suggestCode(
    projectId: string,
    taskId: number,
    unit: number,
    text: string,
  ): Promise<ProjectDoc> {
    return this.request('POST', `/projects/${projectId}/code/suggestion`, {
      task_id: taskId,
      unit,
      text,
    });
  }

  events(projectId: string, since: number, waitSeconds = 0): Promise<EventsPage> {
    const query = `since=${since}&wait=${waitSeconds}`;
    return this.request('GET', `/projects/${projectId}/events?${query}`);
  }

  summary(projectId: string): Promise<RunSummaryDoc> {
    return this.request('GET', `/projects/${projectId}/summary`);
  }
}
