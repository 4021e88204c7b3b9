import type { AttentionReport } from "./types.js";

/** Cell opacities for one (layer, head): each row is scaled so its largest
 * weight renders at full intensity. */
export function rowNormalized(matrix: number[][]): number[][] {
  return matrix.map((row) => {
    const max = Math.max(...row);
    return row.map((w) => (max > 0 ? w / max : 0));
  });
}

function trimmedInputs(report: AttentionReport): { labels: string[]; count: number } {
  let count = report.tokens_in.length;
  while (count > 0 && report.tokens_in[count - 1] === "<pad>") count--;
  return { labels: report.tokens_in.slice(0, count), count };
}

/**
 * Render one head's cross-attention as a DOM grid: rows are output tokens,
 * columns are input stroke tokens, cell intensity proportional to the
 * row-normalized weight.
 */
export function renderHeatmap(container: HTMLElement, report: AttentionReport,
                              layer: number, head: number): void {
  container.textContent = "";
  const doc = container.ownerDocument;
  const matrix = report.layers[layer]?.[head];
  if (!matrix || matrix.length === 0) {
    const empty = doc.createElement("p");
    empty.className = "heatmap-empty";
    empty.textContent = "no attention to show";
    container.appendChild(empty);
    return;
  }
  const { labels, count } = trimmedInputs(report);
  const scaled = rowNormalized(matrix.map((row) => row.slice(0, count)));
  const table = doc.createElement("table");
  table.className = "heatmap";

  const header = doc.createElement("tr");
  header.appendChild(doc.createElement("th"));
  for (const label of labels) {
    const th = doc.createElement("th");
    th.textContent = label;
    header.appendChild(th);
  }
  table.appendChild(header);

  report.tokens_out.forEach((outTok, i) => {
    const tr = doc.createElement("tr");
    const th = doc.createElement("th");
    th.textContent = outTok;
    tr.appendChild(th);
    scaled[i]?.forEach((alpha, j) => {
      const td = doc.createElement("td");
      td.className = "heatmap-cell";
      td.style.backgroundColor = `rgba(30, 90, 200, ${alpha.toFixed(3)})`;
      td.title = `${outTok} → ${labels[j]}: ${matrix[i][j].toFixed(3)}`;
      tr.appendChild(td);
    });
    table.appendChild(tr);
  });
  container.appendChild(table);
}

/** <select> options for every (layer, head) pair; default layer 1 head 1. */
export function headChoices(report: AttentionReport):
    { layer: number; head: number; label: string }[] {
  const out = [];
  for (let l = 0; l < report.layers.length; l++) {
    for (let h = 0; h < (report.layers[l]?.length ?? 0); h++) {
      out.push({ layer: l, head: h, label: `layer ${l + 1} / head ${h + 1}` });
    }
  }
  return out;
}
