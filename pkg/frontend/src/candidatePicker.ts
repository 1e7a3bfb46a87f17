/** Candidate picker: the K snippets with their sandbox reports side by
 * side. A candidate that failed parsing or carries tracebacks is disabled,
 * mirroring the server's selection invariant. */

import type { ConsoleApi } from './api.js';
import type { CandidateSetDoc, ProjectDoc, TestReportDoc } from './types.js';

export interface CandidateCard {
  index: number;
  lines: string[];
  generationError: string | null;
  report: TestReportDoc | null;
  passing: boolean;
  vetoed: boolean;
  disabled: boolean;
  selected: boolean;
}

export interface CandidateView {
  taskId: number;
  unit: number;
  goal: string;
  cards: CandidateCard[];
  allEliminated: boolean;
}

export function buildCandidateView(candidateSet: CandidateSetDoc): CandidateView {
  const reports = new Map(candidateSet.reports.map((r) => [r.candidate, r]));
  const vetoes = new Set(candidateSet.user_vetoes);
  const cards = candidateSet.candidates.map((candidate) => {
    const report = reports.get(candidate.index) ?? null;
    const passing = !!report && report.parse_ok && report.tracebacks.length === 0;
    const vetoed = vetoes.has(candidate.index);
    return {
      index: candidate.index,
      lines: candidate.lines ?? [],
      generationError: candidate.error,
      report,
      passing,
      vetoed,
      disabled: !passing || vetoed,
      selected: candidateSet.selected === candidate.index,
    };
  });
  return {
    taskId: candidateSet.spec.task_id,
    unit: candidateSet.spec.unit_index,
    goal: candidateSet.spec.goal,
    cards,
    allEliminated: cards.every((c) => c.disabled),
  };
}

export function pendingCandidateSet(project: ProjectDoc): CandidateSetDoc | null {
  if (project.pending?.kind !== 'candidates') return null;
  const taskId = project.pending['task_id'] as number;
  const unit = project.pending['unit'] as number;
  return (
    project.candidate_sets.find(
      (cs) => cs.spec.task_id === taskId && cs.spec.unit_index === unit,
    ) ?? null
  );
}

export async function pick(
  api: ConsoleApi,
  projectId: string,
  view: CandidateView,
  index: number,
): Promise<ProjectDoc> {
  const card = view.cards.find((c) => c.index === index);
  if (!card || card.disabled) {
    throw new Error(`candidate ${index} cannot be picked`);
  }
  return api.pickCandidate(projectId, view.taskId, view.unit, index);
}

/** Veto candidates; the server then auto-selects the next survivor. An
 * empty veto list asks the server to pick the lowest survivor. */
export async function veto(
  api: ConsoleApi,
  projectId: string,
  view: CandidateView,
  indices: number[],
): Promise<ProjectDoc> {
  return api.vetoCandidates(projectId, view.taskId, view.unit, indices);
}
