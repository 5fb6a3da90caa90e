import init, { defaultDesign, heatmap, compare, analyze } from "./pkg/causal_completion_web.js";

const $ = (id) => document.getElementById(id);
const CELL = 36;

function settings() {
  const kind = $("pattern").value;
  const p = Number($("param").value);
  const pattern = { kind, seed: Number($("seed").value) };
  if (kind === "square_block") pattern.n_obs = Math.round(p);
  else if (kind === "staircase") pattern.block_fraction = p;
  else pattern.density = p;
  return {
    design: $("design").value,
    samples: Number($("samples").value),
    seed: Number($("seed").value),
    shuffles: Number($("shuffles").value),
    alpha: Number($("alpha").value),
    pattern: JSON.stringify(pattern),
  };
}

function color(t) {
  // diverging blue-white-red, t in [-1, 1]
  const a = Math.min(1, Math.abs(t));
  const c = Math.round(255 * (1 - a));
  return t < 0 ? `rgb(${c},${c},255)` : `rgb(255,${c},${c})`;
}

function draw(canvas, grid, mask, scale) {
  canvas.width = grid.cols * CELL;
  canvas.height = grid.rows * CELL;
  const ctx = canvas.getContext("2d");
  for (let i = 0; i < grid.rows; i++) {
    for (let j = 0; j < grid.cols; j++) {
      const v = grid.values[i * grid.cols + j];
      ctx.fillStyle = color(v / scale);
      ctx.fillRect(j * CELL, i * CELL, CELL, CELL);
      if (mask && !mask[i * grid.cols + j]) {
        ctx.strokeStyle = "#333";
        ctx.beginPath();
        for (let k = -CELL; k < CELL; k += 6) {
          ctx.moveTo(j * CELL + k, i * CELL);
          ctx.lineTo(j * CELL + k + CELL, i * CELL + CELL);
        }
        ctx.save();
        ctx.rect(j * CELL, i * CELL, CELL, CELL);
        ctx.clip();
        ctx.stroke();
        ctx.restore();
      }
    }
  }
  canvas.title = `rows: ${grid.row_labels.join(", ")}\ncols: ${grid.col_labels.join(", ")}`;
}

function guarded(fn) {
  return () => {
    $("error").textContent = "";
    try {
      fn();
    } catch (e) {
      $("error").textContent = String(e.message ?? e);
    }
  };
}

const fmt = (x, d = 3) => (x === null || !Number.isFinite(x) ? "n/a" : x.toFixed(d));

function showHeatmap() {
  const s = settings();
  const out = JSON.parse(heatmap(s.design, s.samples, s.seed, s.pattern));
  const scale = Math.max(...out.expected.values.map(Math.abs), 1e-9);
  draw($("expected"), out.expected, null, scale);
  draw($("sampled"), out.sampled, out.mask, scale);
}

function showCompare() {
  const s = settings();
  const rows = JSON.parse(compare(s.design, s.samples, s.seed, s.pattern, s.shuffles));
  const body = rows
    .map((r) => {
      const w = Math.max(0, Math.min(1, r.median)) * 200;
      return `<tr><td>${r.estimator}</td><td>${fmt(r.median)}</td><td>${fmt(r.q1)}</td><td>${fmt(r.q3)}</td>` +
        `<td style="text-align:left"><span class="bar" style="width:${w}px"></span></td></tr>`;
    })
    .join("");
  $("compare").innerHTML =
    `<h2>R² on hidden cells</h2><table><tr><th>estimator</th><th>median</th><th>q1</th><th>q3</th><th></th></tr>${body}</table>`;
}

function showAnalyze() {
  const s = settings();
  const out = JSON.parse(analyze(s.design, s.samples, s.seed, s.alpha));
  const spec = out.singular_values
    .map((sv, k) => `<tr><td>${k + 1}</td><td>${fmt(sv, 4)}</td><td>${fmt(out.explained_variance[k][1], 4)}</td></tr>`)
    .join("");
  const tests = out.tests
    .map((t) => `<tr><td>${t.name}</td><td>${t.family_size}</td><td>${t.rejected}</td><td>${fmt(t.min_p, 4)}</td><td>${fmt(t.corrected_alpha, 5)}</td></tr>`)
    .join("");
  $("analyze").innerHTML =
    `<h2>Spectrum of the expected matrix</h2><table><tr><th>rank</th><th>σ</th><th>cumulative energy</th></tr>${spec}</table>` +
    `<h2>Structure tests (Bonferroni)</h2><table><tr><th>test</th><th>family</th><th>rejected</th><th>min p</th><th>threshold</th></tr>${tests}</table>`;
}

$("pattern").addEventListener("change", () => {
  $("param").value = { square_block: 4, staircase: 0.5, uniform_random: 0.7 }[$("pattern").value];
});

await init();
$("design").value = defaultDesign();
$("run-heatmap").onclick = guarded(showHeatmap);
$("run-compare").onclick = guarded(showCompare);
$("run-analyze").onclick = guarded(showAnalyze);
guarded(showHeatmap)();
