// DTOs mirroring the service responses. The console performs no local
// inference: every number rendered comes from one of these payloads.

export type AnomalyStatus = "pending" | "interpreted" | "labeled" | "suppressed";

export interface AnomalySummary {
  id: string;
  kind: "tabular" | "sequence" | "graph";
  score: number;
  threshold: number;
  queued: boolean;
  received_at: number;
  status: AnomalyStatus;
  label: string | null;
  drift_flagged: boolean;
}

export interface InterpretationEntry {
  dim: number;
  feature: string;
  anomaly_value: number;
  reference_value: number;
  effectiveness: number;
  anomaly_display: number;
  reference_display: number;
}

export interface InterpretationView {
  id: string;
  kind: string;
  k: number;
  converged: boolean;
  entries: InterpretationEntry[];
}

export interface MatchView {
  anomaly_id: string;
  states: number[];
  probabilities: Record<string, number>;
  decision: string;
  suppressed: boolean;
  drift_flagged: boolean;
  drift_score: number;
}

export interface FeedbackResult {
  anomaly_id: string;
  label: string;
  rule_states: number[];
  status: AnomalyStatus;
}
