import type { RecognizeRequest, RecognizeResponse, UiStroke } from "./types.js";

/** Request body for the service: raw point lists, exactly as captured. */
export function serializeStrokes(strokes: UiStroke[]): RecognizeRequest {
  return { strokes: strokes.map((s) => s.points.map((p) => [...p] as typeof p)) };
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export async function recognize(
  baseUrl: string,
  strokes: UiStroke[],
  fetchImpl: FetchLike = fetch,
): Promise<RecognizeResponse> {
  let response: Response;
  try {
    response = await fetchImpl(`${baseUrl}/recognize`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(serializeStrokes(strokes)),
    });
  } catch (err) {
    throw new ApiError(0, `service unreachable: ${String(err)}`);
  }
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      detail = typeof body.detail === "string" ? body.detail
        : JSON.stringify(body.detail);
    } catch { /* non-json error body */ }
    throw new ApiError(response.status, `recognize failed (${response.status}): ${detail}`);
  }
  return (await response.json()) as RecognizeResponse;
}
