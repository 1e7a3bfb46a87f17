/** Elicitation forms generated from the pending request's arg schema.
 * Client-side kind validation mirrors the server's KindMismatch rules so a
 * bad value never leaves the form. */

import type { ConsoleApi } from './api.js';
import type { ArgKind, ElicitationRequestDoc, ProjectDoc } from './types.js';

export type InputType = 'text' | 'number' | 'select';

export interface FormField {
  name: string;
  kind: ArgKind;
  inputType: InputType;
  guidance: string;
  choices: string[];
}

export interface FieldResult {
  ok: boolean;
  value?: string | number;
  error?: string;
}

const INPUT_TYPES: Record<ArgKind, InputType> = {
  string: 'text',
  entity_ref: 'text',
  integer: 'number',
  number: 'number',
  enum: 'select',
};

export function buildForm(request: ElicitationRequestDoc): FormField[] {
  return request.args.map((arg) => ({
    name: arg.arg_name,
    kind: arg.arg_kind,
    inputType: INPUT_TYPES[arg.arg_kind],
    guidance: arg.guidance,
    choices: arg.choices ?? [],
  }));
}

export function validateField(field: FormField, raw: string): FieldResult {
  const text = raw.trim();
  if (!text) return { ok: false, error: `${field.name} is required` };
  switch (field.kind) {
    case 'integer': {
      if (!/^-?\d+$/.test(text)) {
        return { ok: false, error: `${field.name} must be an integer` };
      }
      return { ok: true, value: Number.parseInt(text, 10) };
    }
    case 'number': {
      const value = Number(text);
      if (!Number.isFinite(value)) {
        return { ok: false, error: `${field.name} must be a number` };
      }
      return { ok: true, value };
    }
    case 'enum': {
      if (!field.choices.includes(text)) {
        return { ok: false, error: `${field.name} must be one of ${field.choices.join(', ')}` };
      }
      return { ok: true, value: text };
    }
    case 'entity_ref': {
      if (/\s/.test(text)) {
        return { ok: false, error: `${field.name} cannot contain spaces` };
      }
      return { ok: true, value: text };
    }
    default:
      return { ok: true, value: text };
  }
}

export function validateForm(
  fields: FormField[],
  raw: Record<string, string>,
): { ok: boolean; values: Record<string, string | number>; errors: string[] } {
  const values: Record<string, string | number> = {};
  const errors: string[] = [];
  for (const field of fields) {
    const result = validateField(field, raw[field.name] ?? '');
    if (result.ok && result.value !== undefined) {
      values[field.name] = result.value;
    } else if (result.error) {
      errors.push(result.error);
    }
  }
  return { ok: errors.length === 0, values, errors };
}

export async function submitAnswers(
  api: ConsoleApi,
  projectId: string,
  taskId: number,
  values: Record<string, string | number>,
): Promise<ProjectDoc> {
  return api.submitArguments(projectId, taskId, values);
}

export function pendingElicitations(project: ProjectDoc): ElicitationRequestDoc[] {
  if (project.pending?.kind !== 'elicitation') return [];
  return (project.pending['requests'] as ElicitationRequestDoc[]) ?? [];
}
