import init, { rotation_curves, simulate_and_fit, alpha_path } from "./pkg/sdfm_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function lines(canvas, xs, series, opts = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  const all = series.flatMap((s) => s.ys).filter(Number.isFinite);
  const [ylo, yhi] = [Math.min(...all), Math.max(...all)];
  const span = yhi - ylo || 1;
  const xmap = opts.logx ? Math.log10 : (v) => v;
  const [xlo, xhi] = [xmap(xs[0]), xmap(xs[xs.length - 1])];
  const px = (v) => pad + ((xmap(v) - xlo) / (xhi - xlo || 1)) * (w - 2 * pad);
  const py = (v) => h - pad - ((v - ylo) / span) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  series.forEach(({ ys, color, label }, k) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    ys.forEach((y, i) => (i ? ctx.lineTo(px(xs[i]), py(y)) : ctx.moveTo(px(xs[i]), py(y))));
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(label, w - pad - 80, pad + 14 * (k + 1));
  });
  ctx.fillStyle = "#444";
  ctx.fillText(yhi.toPrecision(4), 2, pad);
  ctx.fillText(ylo.toPrecision(4), 2, h - pad);
}

function heatmap(canvas, m) {
  const ctx = canvas.getContext("2d");
  const rows = m.length, cols = m[0].length;
  const cw = canvas.width / cols, ch = canvas.height / rows;
  const top = Math.max(...m.flat().map(Math.abs)) || 1;
  m.forEach((row, i) =>
    row.forEach((v, k) => {
      const a = Math.abs(v) / top;
      ctx.fillStyle = v === 0 ? "#fff" : v > 0 ? `rgba(200,40,40,${a})` : `rgba(40,40,200,${a})`;
      ctx.fillRect(k * cw, i * ch, cw, ch);
    }),
  );
}

function guarded(fn) {
  return () => {
    $("status").textContent = "";
    try {
      fn();
    } catch (e) {
      $("status").textContent = String(e);
    }
  };
}

function drawRotation() {
  const c = JSON.parse(rotation_curves(num("rot-points")));
  lines($("rot-canvas"), c.theta, [
    { ys: c.l0, color: "#c33", label: "ℓ0" },
    { ys: c.l1, color: "#36c", label: "ℓ1" },
    { ys: c.l2, color: "#393", label: "ℓ2" },
  ]);
}

function drawFit() {
  const r = JSON.parse(simulate_and_fit(num("fit-n"), num("fit-p"), num("fit-rho"), num("fit-seed"), num("fit-alpha")));
  heatmap($("fit-truth"), r.truth);
  heatmap($("fit-est"), r.estimate);
  $("fit-summary").textContent =
    `α = ${r.alpha}: ${r.nonzero} non-zero loadings, MAE ${r.mae.toFixed(4)}, F1 ${r.f1.toFixed(3)}, ` +
    `${r.objective_trace.length - 1} EM iterations${r.converged ? "" : " (not converged)"}`;
}

function drawPath() {
  const r = JSON.parse(alpha_path(num("fit-n"), num("fit-p"), num("fit-rho"), num("fit-seed"), num("path-points")));
  lines($("path-canvas"), r.alpha, [{ ys: r.bic, color: "#36c", label: "BIC" }], { logx: true });
  $("path-summary").textContent =
    `chosen α = ${r.chosen_alpha?.toPrecision(4)}; non-zeros along the path: ${r.nonzero.join(", ")}` +
    (r.terminated_early ? " (stopped at the first empty factor)" : "");
}

await init();
$("status").textContent = "";
$("rot-run").onclick = guarded(drawRotation);
$("fit-run").onclick = guarded(drawFit);
$("path-run").onclick = guarded(drawPath);
guarded(drawRotation)();
