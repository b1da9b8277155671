import init, { select_round, simulate, sigmaSweep } from "./pkg/taudis_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

function params() {
  const num = (id) => Number($(id).value);
  return {
    num_images: num("num_images"),
    num_clusters: num("num_clusters"),
    hot_clusters: num("hot_clusters"),
    budget: num("budget"),
    alpha: num("alpha"),
    beta: num("beta"),
    sigma: num("sigma"),
    seed: num("seed"),
  };
}

function guarded(fn) {
  return () => {
    $("error").textContent = "";
    try {
      fn();
    } catch (e) {
      $("error").textContent = String(e);
    }
  };
}

function clusterColor(c, n) {
  return `hsl(${Math.round((360 * c) / n)}, 65%, 55%)`;
}

function drawRound() {
  const view = JSON.parse(select_round(JSON.stringify(params())));
  const canvas = $("scatter");
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const scale = width / 3.2;
  const px = (x) => width / 2 + x * scale;
  const py = (y) => height / 2 - y * scale;

  for (let c = 0; c < view.num_clusters; c++) {
    const pts = view.points.filter((p) => p.cluster === c);
    if (!pts.length || !pts[0].hot) continue;
    const angle = (2 * Math.PI * c) / view.num_clusters;
    ctx.beginPath();
    ctx.arc(px(Math.cos(angle)), py(Math.sin(angle)), 0.3 * scale, 0, 2 * Math.PI);
    ctx.strokeStyle = "#f4b6b6";
    ctx.lineWidth = 6;
    ctx.stroke();
  }
  for (const p of view.points) {
    const x = px(p.x), y = py(p.y);
    ctx.beginPath();
    ctx.arc(x, y, p.representative ? 6 : 3.5, 0, 2 * Math.PI);
    ctx.fillStyle = p.representative ? "#111" : clusterColor(p.cluster, view.num_clusters);
    ctx.fill();
    if (p.candidate) {
      ctx.lineWidth = 1.5;
      ctx.strokeStyle = "#333";
      ctx.stroke();
    }
    if (p.taudis) {
      ctx.setLineDash([]);
      ctx.strokeStyle = "#d62728";
      ctx.lineWidth = 2;
      ctx.strokeRect(x - 9, y - 9, 18, 18);
    }
    if (p.wse) {
      ctx.setLineDash([3, 3]);
      ctx.strokeStyle = "#1f77b4";
      ctx.lineWidth = 2;
      ctx.strokeRect(x - 12, y - 12, 24, 24);
      ctx.setLineDash([]);
    }
  }
  $("round_summary").textContent =
    `${view.candidates} candidates, ${view.representatives} representatives covering ${view.coverage} instances. ` +
    `taudis images reach ${view.taudis_clusters} of ${view.num_clusters} clusters; ` +
    `WSE ranking reaches ${view.wse_clusters}.`;
}

function drawLines(canvas, series, xs, yMax, yLabel) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  const pad = 40;
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#999";
  ctx.lineWidth = 1;
  ctx.strokeRect(pad, 10, width - pad - 10, height - pad - 10);
  ctx.fillStyle = "#333";
  ctx.font = "12px system-ui";
  ctx.fillText(yLabel, 4, 20);
  ctx.fillText(String(xs[0]), pad, height - pad + 16);
  ctx.fillText(String(xs[xs.length - 1]), width - 40, height - pad + 16);
  const sx = (i) => pad + ((width - pad - 10) * i) / Math.max(1, xs.length - 1);
  const sy = (v) => height - pad - ((height - pad - 10) * v) / yMax;
  series.forEach((s, k) => {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.lineWidth = 2;
    ctx.beginPath();
    s.values.forEach((v, i) => (i ? ctx.lineTo(sx(i), sy(v)) : ctx.moveTo(sx(i), sy(v))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.name, pad + 8, 26 + 15 * k);
  });
}

function drawSimulation() {
  const p = { ...params(), rounds: Number($("rounds").value) };
  const curves = JSON.parse(simulate(JSON.stringify(p)));
  const xs = curves[0].cluster_coverage.map((_, i) => i);
  drawLines(
    $("curves"),
    curves.map((c) => ({ name: c.strategy, values: c.cluster_coverage })),
    xs,
    1,
    "coverage",
  );
}

function drawSweep() {
  const sweep = JSON.parse(sigmaSweep(JSON.stringify(params())));
  const n = Number($("num_clusters").value);
  drawLines(
    $("sweep"),
    [
      { name: "representative clusters", values: sweep.map((s) => s.representative_clusters) },
      { name: "selected-image clusters", values: sweep.map((s) => s.selected_clusters) },
    ],
    sweep.map((s) => s.sigma.toFixed(2)),
    n,
    "clusters",
  );
}

await init();
$("sigma").addEventListener("input", () => ($("sigma_out").textContent = Number($("sigma").value).toFixed(2)));
$("run_round").addEventListener("click", guarded(drawRound));
$("run_sim").addEventListener("click", guarded(drawSimulation));
$("run_sweep").addEventListener("click", guarded(drawSweep));
guarded(drawRound)();
