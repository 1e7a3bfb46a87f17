export { ApiError, ConsoleApi } from './api.js';
export type { FetchLike, ProjectConfigOverrides } from './api.js';
export * from './types.js';
export {
  addTask,
  approve,
  buildPlanView,
  modifyTask,
  removeTask,
  reorderTasks,
  submitRectification,
} from './planEditor.js';
export type { PlanTaskRow, PlanView } from './planEditor.js';
export {
  buildForm,
  pendingElicitations,
  submitAnswers,
  validateField,
  validateForm,
} from './argumentForm.js';
export type { FieldResult, FormField, InputType } from './argumentForm.js';
export {
  buildCandidateView,
  pendingCandidateSet,
  pick,
  veto,
} from './candidatePicker.js';
export type { CandidateCard, CandidateView } from './candidatePicker.js';
export {
  EventGapError,
  RunMonitor,
  buildSummaryCard,
  renderEventLine,
} from './runMonitor.js';
export type { LogLine, MonitorOptions, SummaryCard } from './runMonitor.js';
