/**
 * Shapes of the optimization service's JSON responses.
 *
 * The dashboard never recomputes model quantities client-side; everything
 * rendered comes straight from these payloads.
 */

export type RunStatus = "running" | "awaiting_human" | "stopped";

export type BestSoFar = {
  inputs: Record<string, number>;
  targets: Record<string, number>;
  value: number;
};

export type RunState = {
  iteration: number;
  cycle: number;
  ei_sum_history: number[];
  best_so_far: BestSoFar | null;
  consumed_energy_j: number;
  status: RunStatus;
  stop_reason: string | null;
};

export type ParameterInfo = {
  name: string;
  kind: "continuous" | "discrete";
  lower: number | null;
  upper: number | null;
  values: number[] | null;
};

export type Sweep = {
  parameter: string;
  values: number[];
  ei_sum: number[];
};

export type Proposal = {
  inputs: Record<string, number>;
  ei_sum: number;
  predicted_mean: Record<string, number>;
  predicted_std: Record<string, number>;
};

export type AcquisitionProfile = {
  available: boolean;
  sweeps: Sweep[];
  proposals: Proposal[];
  last_selected: Record<string, number>[] | null;
};

export type HistoryRecord = {
  part_id: string;
  inputs: Record<string, number>;
  targets: Record<string, number>;
  trainable: boolean;
  meta: {
    iteration: number;
    cycle: number;
    source: string;
    progress: number;
    terminated_early: boolean;
    energy_j: number;
  };
};

export type SelectResult =
  | { kind: "queued"; point: Record<string, number> }
  | { kind: "invalid"; errors: Record<string, string> }
  | { kind: "conflict"; message: string };
