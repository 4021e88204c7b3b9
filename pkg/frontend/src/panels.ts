import type { RecognizeResponse } from "./types.js";

export interface Panels {
  ascii: HTMLElement;
  rpn: HTMLElement;
  value: HTMLElement;
  badge: HTMLElement;
  timing: HTMLElement;
  error: HTMLElement;
}

const SPECIALS = new Set(["<bos>", "<eos>", "<pad>"]);

export function renderResult(panels: Panels, res: RecognizeResponse): void {
  panels.error.textContent = "";
  panels.error.hidden = true;
  panels.ascii.textContent = res.ascii || "—";

  panels.rpn.textContent = "";
  const doc = panels.rpn.ownerDocument;
  for (const tok of res.tokens) {
    if (SPECIALS.has(tok)) continue;
    const chip = doc.createElement("span");
    chip.className = tok === "<eon>" ? "chip chip-eon" : "chip";
    chip.textContent = tok === "<eon>" ? "eon" : tok;
    panels.rpn.appendChild(chip);
  }

  panels.value.textContent = res.value ?? "—";
  panels.badge.textContent = res.violations === 0
    ? "valid RPN" : `${res.violations} violation${res.violations === 1 ? "" : "s"}`;
  panels.badge.className = res.violations === 0 ? "badge badge-ok" : "badge badge-bad";
  panels.timing.textContent = `${res.ms.toFixed(1)} ms`;
}

export function renderError(panels: Panels, message: string): void {
  panels.error.textContent = message;
  panels.error.hidden = false;
}
