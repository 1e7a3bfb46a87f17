/** Documents served by the pipeline API. The console renders these as-is:
 * every number shown on screen comes straight from one of these fields. */

export type PipelineStateName =
  | 'received'
  | 'planning'
  | 'plan_awaiting_user'
  | 'task_identification'
  | 'arg_awaiting_user'
  | 'code_gen'
  | 'candidate_awaiting_user'
  | 'code_review'
  | 'executing'
  | 'summarized'
  | 'failed';

export type ArgKind = 'string' | 'integer' | 'number' | 'entity_ref' | 'enum';

export interface FindingDoc {
  kind: string;
  target_id: number;
  note: string;
}

export interface VerdictDoc {
  accepted: boolean;
  findings: FindingDoc[];
  revision: string | null;
}

export interface ArgumentSetDoc {
  values: Record<string, string | number>;
  missing: string[];
}

export interface TaskDoc {
  task_id: number;
  description: string;
  task_type: string | null;
  arguments: ArgumentSetDoc | null;
  depends_on: number[];
  reviewed: boolean;
}

export interface PlanDoc {
  plan_id: string;
  request_id: string;
  genre: string;
  tasks: TaskDoc[];
  revision: number;
  status: string;
}

export interface ElicitedArgDoc {
  arg_name: string;
  arg_kind: ArgKind;
  guidance: string;
  choices?: string[];
}

export interface ElicitationRequestDoc {
  task_id: number;
  args: ElicitedArgDoc[];
}

export interface TracebackDoc {
  task_id: number;
  command: string;
  kind: string;
  message: string;
}

export interface TestReportDoc {
  candidate: number;
  parse_ok: boolean;
  tracebacks: TracebackDoc[];
  commands_executed: number;
  state_delta: Record<string, unknown>;
}

export interface CandidateDoc {
  index: number;
  lines: string[] | null;
  error: string | null;
}

export interface SnippetSpecDoc {
  task_id: number;
  unit_index: number;
  goal: string;
  line_budget: number;
  tags: string[];
}

export interface CandidateSetDoc {
  spec: SnippetSpecDoc;
  candidates: CandidateDoc[];
  reports: TestReportDoc[];
  user_vetoes: number[];
  selected: number | null;
}

export interface RunSummaryDoc {
  task_status: Record<string, string>;
  tasks: number;
  commands: number;
  tracebacks: number;
  digest: Record<string, number>;
}

export interface EventDoc {
  seq: number;
  author: string;
  stage: string;
  payload: unknown;
}

export interface PendingDoc {
  kind: 'genre' | 'plan' | 'elicitation' | 'task_review' | 'cycle' | 'candidates' | 'error';
  [key: string]: unknown;
}

export interface ProjectDoc {
  project_id: string;
  state: PipelineStateName;
  genre: string | null;
  plan: PlanDoc | null;
  pending: PendingDoc | null;
  candidate_sets: CandidateSetDoc[];
  code_reviews: { task_id: number; unit: number; verdict: VerdictDoc }[];
  summary: RunSummaryDoc | null;
  failure: string | null;
  record: EventDoc[];
  [key: string]: unknown;
}

export interface EventsPage {
  events: EventDoc[];
  latest_seq: number;
}

export type RectificationBody =
  | { kind: 'add'; description: string; depends_on?: number[] }
  | { kind: 'remove'; target_id: number }
  | { kind: 'modify'; target_id: number; description?: string; depends_on?: number[] }
  | { kind: 'reorder'; order: number[] }
  | { kind: 'set_genre'; genre: string };
