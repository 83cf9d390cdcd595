// Wire types for the eabo elicitation service. The UI renders exactly what
// the service returns and computes no model quantities of its own; these
// types mirror the JSON bodies one to one.

import { z } from "zod";

export type Status = "awaiting_response" | "computing" | "finished" | "abandoned";

export interface EvaluateCoords {
  x: number[];
}

export interface CompareCoords {
  x_a: number[];
  x_b: number[];
}

export interface QueryMessage {
  session: string;
  iteration: number;
  type: "evaluate" | "compare";
  cost: number;
  coordinates: EvaluateCoords | CompareCoords;
  remaining_budget: number;
  voi_eval_raw: number | null;
  voi_comp_raw: number | null;
}

export interface Recommendation {
  x: number[];
  expected_utility: number;
  norm_utility: number | null;
  fingerprint?: string | null;
}

export interface SessionSummary {
  id: string;
  status: Status;
  iteration: number;
  spend: number;
  remaining_budget: number;
  query?: QueryMessage;
  recommendation?: Recommendation;
}

export interface ActionDoc {
  kind: "evaluate" | "compare";
  cost: number;
  x?: number[];
  x_a?: number[];
  x_b?: number[];
}

export interface StepDoc {
  iteration: number;
  action: ActionDoc;
  cost: number;
  cum_spend: number;
  outcome: number | number[];
  recommendation: number[];
  norm_utility: number | null;
  rule: string;
  voi_eval_raw: number | null;
  voi_comp_raw: number | null;
  warm_fingerprint: string | null;
  fitted_fingerprint: string | null;
  wall_ms: number;
}

export interface GridSlice {
  kind: "grid";
  axis: number[];
  values: number[] | number[][];
}

export interface ProfileSlice {
  kind: "profiles";
  axis: number[];
  anchor: number[];
  values: number[][];
}

export type PosteriorSlice = GridSlice | ProfileSlice;

export interface BudgetView {
  total: number;
  spent: number;
  remaining: number;
}

export interface SessionState {
  id: string;
  status: Status;
  config: Record<string, unknown>;
  iteration: number;
  budget: BudgetView;
  data: { n_eval: number; n_comp: number };
  trajectory: StepDoc[];
  recommendation: Recommendation | null;
  posterior_slice: PosteriorSlice | null;
  query?: QueryMessage;
}

export interface SubmitReply {
  session: string;
  status: Status;
  iteration?: number;
  spend?: number;
  remaining_budget?: number;
  query?: QueryMessage;
  recommendation?: Recommendation | null;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  field?: string;
}

// Optional per-dimension display bounds: [low, high, unit?]. The service
// config carries none today; when present they only change formatting.
export type Bounds = Array<[number, number, string?]>;

// --------------------------------------------------------------------------
// Export document validation (zod). GET /v1/sessions/{id}/export must parse
// against this schema before the UI offers the download.

const finiteOrNull = z.union([z.number(), z.null()]);

const recordSchema = z.union([
  z.object({
    type: z.literal("eval"),
    x: z.array(z.number()),
    y: z.array(z.number()),
  }),
  z.object({
    type: z.literal("comp"),
    x_a: z.array(z.number()),
    x_b: z.array(z.number()),
    d: z.union([z.literal(0), z.literal(1)]),
  }),
]);

const actionSchema = z
  .object({
    kind: z.union([z.literal("evaluate"), z.literal("compare")]),
    cost: z.number(),
    x: z.array(z.number()).optional(),
    x_a: z.array(z.number()).optional(),
    x_b: z.array(z.number()).optional(),
  })
  .refine(
    (a) => (a.kind === "evaluate" ? a.x !== undefined : a.x_a !== undefined && a.x_b !== undefined),
    { message: "action coordinates must match its kind" },
  );

const stepSchema = z.object({
  iteration: z.number().int().nonnegative(),
  action: actionSchema,
  cost: z.number().positive(),
  cum_spend: z.number().nonnegative(),
  outcome: z.union([z.number(), z.array(z.number())]),
  recommendation: z.array(z.number()),
  norm_utility: finiteOrNull,
  rule: z.string(),
  voi_eval_raw: finiteOrNull,
  voi_comp_raw: finiteOrNull,
  warm_fingerprint: z.string().nullable(),
  fitted_fingerprint: z.string().nullable(),
  wall_ms: z.number(),
});

const finalSchema = z.object({
  x: z.array(z.number()),
  expected_utility: z.number(),
  norm_utility: finiteOrNull,
  fingerprint: z.string().nullable(),
});

const summarySchema = z.object({
  config: z.record(z.unknown()),
  complete: z.boolean(),
  n_steps: z.number().int().nonnegative(),
  total_spend: z.number().nonnegative(),
  final_recommendation: z.array(z.number()).nullable(),
  final_expected_utility: finiteOrNull,
  final_norm_utility: finiteOrNull,
  final_fingerprint: z.string().nullable(),
  csv_sha256: z.string().regex(/^[0-9a-f]{64}$/),
  allocation: z
    .object({
      comp_fraction: z.number(),
      comp_fraction_early: z.number(),
      comp_fraction_late: z.number(),
      comp_spend: z.number(),
      eval_spend: z.number(),
    })
    .optional(),
});

export const exportSchema = z
  .object({
    session: z.object({
      id: z.string().min(1),
      status: z.union([
        z.literal("awaiting_response"),
        z.literal("finished"),
        z.literal("abandoned"),
      ]),
      config: z.record(z.unknown()),
      records: z.array(recordSchema),
      steps: z.array(stepSchema),
      final: finalSchema.nullable(),
    }),
    trajectory_csv: z.string().min(1),
    summary: summarySchema,
  })
  .refine((doc) => doc.summary.n_steps === doc.session.steps.length, {
    message: "summary.n_steps must match session.steps",
  })
  .refine(
    (doc) => doc.trajectory_csv.trimEnd().split("\n").length === doc.session.steps.length + 1,
    { message: "trajectory_csv must hold one line per step plus the header" },
  );

export type ExportDoc = z.infer<typeof exportSchema>;

export const CSV_HEADER =
  "iter,action_type,action_coords,cost,cum_spend,outcome,rec_coords," +
  "norm_utility,voi_eval_raw,voi_comp_raw,chosen_source,wall_ms";

/** Parse and validate an export document; throws on schema violations. */
export function validateExport(doc: unknown): ExportDoc {
  const parsed = exportSchema.parse(doc);
  const header = parsed.trajectory_csv.split("\n", 1)[0].trimEnd();
  if (header !== CSV_HEADER) {
    throw new Error(`unexpected trajectory CSV header: ${header}`);
  }
  return parsed;
}
