/** Plan review screen: task list plus findings, and rectification builders
 * that validate shapes client-side before posting. */

import type { ConsoleApi } from './api.js';
import type {
  FindingDoc,
  PendingDoc,
  ProjectDoc,
  RectificationBody,
} from './types.js';

export interface PlanTaskRow {
  id: number;
  description: string;
  taskType: string | null;
  dependsOn: number[];
}

export interface PlanView {
  revision: number;
  status: string;
  approvable: boolean;
  tasks: PlanTaskRow[];
  findings: FindingDoc[];
}

function pendingFindings(pending: PendingDoc | null): FindingDoc[] {
  if (!pending) return [];
  const out: FindingDoc[] = [];
  const direct = pending['findings'];
  if (Array.isArray(direct)) out.push(...(direct as FindingDoc[]));
  const recheck = pending['recheck'] as { findings?: FindingDoc[] } | undefined;
  if (recheck?.findings) out.push(...recheck.findings);
  return out;
}

export function buildPlanView(project: ProjectDoc): PlanView {
  const plan = project.plan;
  if (!plan) {
    return { revision: -1, status: 'absent', approvable: false, tasks: [], findings: [] };
  }
  return {
    revision: plan.revision,
    status: plan.status,
    approvable:
      project.state === 'plan_awaiting_user' && project.pending?.kind === 'plan',
    tasks: plan.tasks.map((t) => ({
      id: t.task_id,
      description: t.description,
      taskType: t.task_type,
      dependsOn: t.depends_on,
    })),
    findings: pendingFindings(project.pending),
  };
}

export function modifyTask(
  targetId: number,
  changes: { description?: string; dependsOn?: number[] },
): RectificationBody {
  if (changes.description !== undefined && !changes.description.trim()) {
    throw new Error('description must be non-empty');
  }
  return {
    kind: 'modify',
    target_id: targetId,
    ...(changes.description !== undefined ? { description: changes.description } : {}),
    ...(changes.dependsOn !== undefined ? { depends_on: changes.dependsOn } : {}),
  };
}

export function addTask(description: string, dependsOn: number[] = []): RectificationBody {
  if (!description.trim()) throw new Error('description must be non-empty');
  return { kind: 'add', description, depends_on: dependsOn };
}

export function removeTask(targetId: number): RectificationBody {
  return { kind: 'remove', target_id: targetId };
}

/** Build a reorder payload from a drag result; refuses non-permutations so
 * the server's InvalidPermutation can only fire on stale state. */
export function reorderTasks(taskIds: number[], newOrder: number[]): RectificationBody {
  const sorted = [...newOrder].sort((a, b) => a - b);
  const expected = [...taskIds].sort((a, b) => a - b);
  if (
    sorted.length !== expected.length ||
    sorted.some((v, i) => v !== expected[i])
  ) {
    throw new Error(`new order is not a permutation of ${expected}`);
  }
  return { kind: 'reorder', order: newOrder };
}

export async function submitRectification(
  api: ConsoleApi,
  projectId: string,
  rectification: RectificationBody,
): Promise<ProjectDoc> {
  return api.rectifyPlan(projectId, rectification);
}

export async function approve(api: ConsoleApi, projectId: string): Promise<ProjectDoc> {
  return api.approvePlan(projectId);
}
