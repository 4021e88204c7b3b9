/** Shared wire and UI types for the recognizer client. */

/** One captured point: canvas pixels plus milliseconds from the event clock. */
export type UiPoint = [x: number, y: number, t: number];

export interface UiStroke {
  points: UiPoint[];
  color: string;
  width: number;
}

/** Body of POST /recognize; raw device coordinates, never normalized here. */
export interface RecognizeRequest {
  strokes: UiPoint[][];
}

export interface AttentionReport {
  tokens_in: string[];
  tokens_out: string[];
  /** layers[layer][head][outputToken][inputToken] */
  layers: number[][][][];
}

export interface RecognizeResponse {
  tokens: string[];
  ascii: string;
  violations: number;
  value: string | null;
  attention: AttentionReport;
  ms: number;
}
