import type { UiPoint, UiStroke } from "./types.js";

/** Subset of CanvasRenderingContext2D the pad draws with; injectable so
 * tests can record calls where no real 2d context exists. */
export interface DrawContext {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  lineCap: CanvasLineCap;
  lineJoin: CanvasLineJoin;
}

export interface StrokePadOptions {
  ctx?: DrawContext | null;
  color?: string;
  width?: number;
  onChange?: (strokes: UiStroke[]) => void;
}

/**
 * Pointer-event stroke capture on a canvas. A stroke lives from
 * pointer-down to pointer-up; zero-movement taps (fewer than two distinct
 * points) are discarded; timestamps stay monotone within a stroke. The
 * canvas redraws as the linear interpolation of the captured points.
 */
export class StrokePad {
  readonly strokes: UiStroke[] = [];
  private current: UiStroke | null = null;
  private readonly ctx: DrawContext | null;
  private readonly color: string;
  private readonly width: number;
  private readonly onChange: (strokes: UiStroke[]) => void;

  constructor(readonly canvas: HTMLCanvasElement,
              options: StrokePadOptions = {}) {
    this.ctx = options.ctx !== undefined ? options.ctx
      : (canvas.getContext ? canvas.getContext("2d") : null);
    this.color = options.color ?? "#1a1a2e";
    this.width = options.width ?? 2.5;
    this.onChange = options.onChange ?? (() => {});
    canvas.addEventListener("pointerdown", (e) => this.pointerDown(e as PointerEvent));
    canvas.addEventListener("pointermove", (e) => this.pointerMove(e as PointerEvent));
    canvas.addEventListener("pointerup", (e) => this.pointerUp(e as PointerEvent));
    canvas.addEventListener("pointercancel", (e) => this.pointerUp(e as PointerEvent));
  }

  private canvasPoint(e: PointerEvent): UiPoint {
    const rect = this.canvas.getBoundingClientRect();
    return [e.clientX - rect.left, e.clientY - rect.top, e.timeStamp];
  }

  private pointerDown(e: PointerEvent) {
    e.preventDefault?.();
    if (this.canvas.setPointerCapture && e.pointerId !== undefined) {
      try { this.canvas.setPointerCapture(e.pointerId); } catch { /* jsdom */ }
    }
    this.current = { points: [this.canvasPoint(e)],
                     color: this.color, width: this.width };
  }

  private pointerMove(e: PointerEvent) {
    if (!this.current) return;
    const [x, y, t] = this.canvasPoint(e);
    const last = this.current.points[this.current.points.length - 1];
    if (x === last[0] && y === last[1]) return;
    this.current.points.push([x, y, Math.max(t, last[2] + 0.01)]);
    this.redraw();
  }

  private pointerUp(e: PointerEvent) {
    if (!this.current) return;
    this.pointerMove(e);
    if (this.current.points.length >= 2) {
      this.strokes.push(this.current);
      this.onChange(this.strokes);
    }
    this.current = null;
    this.redraw();
  }

  undo() {
    if (this.strokes.pop()) {
      this.redraw();
      this.onChange(this.strokes);
    }
  }

  clear() {
    if (this.strokes.length || this.current) {
      this.strokes.length = 0;
      this.current = null;
      this.redraw();
      this.onChange(this.strokes);
    }
  }

  redraw() {
    const ctx = this.ctx;
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.lineCap = "round";
    ctx.lineJoin = "round";
    const all = this.current ? [...this.strokes, this.current] : this.strokes;
    for (const stroke of all) {
      ctx.strokeStyle = stroke.color;
      ctx.lineWidth = stroke.width;
      ctx.beginPath();
      ctx.moveTo(stroke.points[0][0], stroke.points[0][1]);
      for (const [x, y] of stroke.points.slice(1)) ctx.lineTo(x, y);
      ctx.stroke();
    }
  }
}
