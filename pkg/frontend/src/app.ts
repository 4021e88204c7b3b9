import { recognize, ApiError, type FetchLike } from "./api.js";
import { StrokePad, type DrawContext } from "./capture.js";
import { headChoices, renderHeatmap } from "./heatmap.js";
import { renderError, renderResult, type Panels } from "./panels.js";
import type { RecognizeResponse } from "./types.js";

export interface AppOptions {
  baseUrl?: string;
  fetchImpl?: FetchLike;
  ctx?: DrawContext | null;
}

export interface App {
  pad: StrokePad;
  panels: Panels;
  recognizeNow: () => Promise<void>;
  root: HTMLElement;
  lastResponse: () => RecognizeResponse | null;
}

function el<K extends keyof HTMLElementTagNameMap>(
    doc: Document, tag: K, className?: string,
    text?: string): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

/** Build the whole client inside root and wire its behaviour. */
export function createApp(root: HTMLElement, options: AppOptions = {}): App {
  const doc = root.ownerDocument;
  const baseUrlDefault = options.baseUrl ?? "http://127.0.0.1:8000";

  const title = el(doc, "h1", "", "inkmath — handwritten expressions");
  const toolbar = el(doc, "div", "toolbar");
  const baseUrlInput = el(doc, "input", "base-url") as HTMLInputElement;
  baseUrlInput.value = baseUrlDefault;
  const undoBtn = el(doc, "button", "", "undo");
  const clearBtn = el(doc, "button", "", "clear");
  const goBtn = el(doc, "button", "go", "recognize");
  toolbar.append(baseUrlInput, undoBtn, clearBtn, goBtn);

  const canvas = el(doc, "canvas", "pad") as HTMLCanvasElement;
  canvas.width = 900;
  canvas.height = 240;

  const panels: Panels = {
    error: el(doc, "div", "error"),
    ascii: el(doc, "div", "panel-body ascii"),
    rpn: el(doc, "div", "panel-body rpn"),
    value: el(doc, "div", "panel-body value"),
    badge: el(doc, "span", "badge"),
    timing: el(doc, "span", "timing"),
  };
  panels.error.hidden = true;

  const results = el(doc, "div", "results");
  const asciiPanel = el(doc, "section", "panel");
  asciiPanel.append(el(doc, "h2", "", "expression"), panels.ascii);
  const rpnPanel = el(doc, "section", "panel");
  const rpnHead = el(doc, "h2", "", "rpn tokens ");
  rpnHead.appendChild(panels.badge);
  rpnPanel.append(rpnHead, panels.rpn);
  const valuePanel = el(doc, "section", "panel");
  const valueHead = el(doc, "h2", "", "value ");
  valueHead.appendChild(panels.timing);
  valuePanel.append(valueHead, panels.value);
  results.append(asciiPanel, rpnPanel, valuePanel);

  const attnPanel = el(doc, "section", "panel attn");
  const attnHead = el(doc, "h2", "", "cross-attention ");
  const headSelect = el(doc, "select", "head-select") as HTMLSelectElement;
  attnHead.appendChild(headSelect);
  const heatmapBox = el(doc, "div", "heatmap-box");
  attnPanel.append(attnHead, heatmapBox);

  root.append(title, toolbar, canvas, panels.error, results, attnPanel);

  const pad = new StrokePad(canvas, { ctx: options.ctx });
  let last: RecognizeResponse | null = null;
  let inFlight = false;
  let queued = false;

  function redrawHeatmap() {
    if (!last) return;
    const [l, h] = headSelect.value.split(",").map(Number);
    renderHeatmap(heatmapBox, last.attention, l || 0, h || 0);
  }

  function fillHeadSelect(res: RecognizeResponse) {
    headSelect.textContent = "";
    for (const choice of headChoices(res.attention)) {
      const opt = doc.createElement("option");
      opt.value = `${choice.layer},${choice.head}`;
      opt.textContent = choice.label;
      headSelect.appendChild(opt);
    }
    headSelect.value = "0,0";
  }

  async function recognizeNow(): Promise<void> {
    if (pad.strokes.length === 0) {
      renderError(panels, "draw at least one stroke first");
      return;
    }
    if (inFlight) {
      queued = true;
      return;
    }
    inFlight = true;
    try {
      const res = await recognize(baseUrlInput.value, pad.strokes,
                                  options.fetchImpl);
      last = res;
      renderResult(panels, res);
      fillHeadSelect(res);
      redrawHeatmap();
    } catch (err) {
      renderError(panels,
                  err instanceof ApiError ? err.message : String(err));
    } finally {
      inFlight = false;
      if (queued) {
        queued = false;
        await recognizeNow();
      }
    }
  }

  undoBtn.addEventListener("click", () => pad.undo());
  clearBtn.addEventListener("click", () => pad.clear());
  goBtn.addEventListener("click", () => { void recognizeNow(); });
  headSelect.addEventListener("change", redrawHeatmap);

  return { pad, panels, recognizeNow, root, lastResponse: () => last };
}
