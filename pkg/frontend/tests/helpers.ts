import type { DrawContext } from "../src/capture.js";
import type { RecognizeResponse } from "../src/types.js";

/** Recording stub for the 2d context (jsdom canvases have none). */
export class FakeContext implements DrawContext {
  calls: string[] = [];
  strokeStyle: string | CanvasGradient | CanvasPattern = "";
  lineWidth = 0;
  lineCap: CanvasLineCap = "butt";
  lineJoin: CanvasLineJoin = "miter";
  clearRect(...args: number[]) { this.calls.push(`clearRect(${args})`); }
  beginPath() { this.calls.push("beginPath"); }
  moveTo(x: number, y: number) { this.calls.push(`moveTo(${x},${y})`); }
  lineTo(x: number, y: number) { this.calls.push(`lineTo(${x},${y})`); }
  stroke() { this.calls.push("stroke"); }
}

export function pointer(target: EventTarget, type: string, x: number, y: number) {
  const event = new MouseEvent(type, { clientX: x, clientY: y, bubbles: true });
  target.dispatchEvent(event);
}

export function drawStroke(canvas: HTMLCanvasElement,
                           points: [number, number][]) {
  pointer(canvas, "pointerdown", points[0][0], points[0][1]);
  for (const [x, y] of points.slice(1)) pointer(canvas, "pointermove", x, y);
  const last = points[points.length - 1];
  pointer(canvas, "pointerup", last[0], last[1]);
}

export function fixedResponse(): RecognizeResponse {
  return {
    tokens: ["<bos>", "4", "<eon>", "6", "<eon>", "*", "=", "<eos>"],
    ascii: "4 eon 6 eon * =",
    violations: 0,
    value: "24",
    attention: {
      tokens_in: ["<bos>", "s0", "s1", "s2", "<eos>", "<pad>", "<pad>", "<pad>"],
      tokens_out: ["4", "<eon>", "6", "<eon>", "*", "=", "<eos>"],
      layers: [
        [sevenByEight(0.1), sevenByEight(0.2)],
        [sevenByEight(0.3), sevenByEight(0.05)],
      ],
    },
    ms: 12.5,
  };
}

function sevenByEight(bias: number): number[][] {
  return Array.from({ length: 7 }, (_, i) =>
    Array.from({ length: 8 }, (_, j) => bias + (i * 8 + j) * 0.001));
}

export function okFetch(body: unknown): typeof fetch {
  return (async () => new Response(JSON.stringify(body), {
    status: 200, headers: { "Content-Type": "application/json" },
  })) as typeof fetch;
}
