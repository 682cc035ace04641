// Loads the wasm-bindgen output from ./pkg (see the README for the build).
import init, { explore_gmm, sweep, augment, classes } from "./pkg/flowconf_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = { Video: "#1f77b4", Chat: "#2ca02c", Background: "#ff7f0e" };

function guard(f) {
  try {
    $("err").textContent = "";
    f();
  } catch (e) {
    $("err").textContent = String(e);
  }
}

function scatter(res) {
  const c = $("scatter"), g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const s = 170, cx = c.width / 2, cy = c.height / 2 + 20;
  for (const p of res.points) {
    const x = cx + p.x * s, y = cy - p.y * s;
    g.beginPath();
    g.arc(x, y, 3, 0, 2 * Math.PI);
    if (p.predicted === null) {
      g.strokeStyle = "#000";
      g.stroke();
    } else {
      g.fillStyle = COLORS[p.predicted] || "#888";
      g.fill();
    }
    if (p.outlier) {
      g.strokeStyle = "#d62728";
      g.strokeRect(x - 5, y - 5, 10, 10);
    }
  }
  g.fillStyle = "#333";
  g.fillText("filled: predicted class   hollow: abstained   red box: injected outlier", 8, 14);
}

function explorer() {
  const r = JSON.parse(explore_gmm(num("sigma"), num("n"), num("outliers"), num("pct"), num("seed")));
  scatter(r);
  $("gmmstats").textContent =
    `threshold ${r.threshold.toFixed(3)}  abstained ${r.abstained}/${r.samples}  ` +
    `outliers rejected ${r.outliers_abstained}/${r.outliers}  coverage ${r.coverage.toFixed(3)}`;
}

function line(g, pts, color, W, H, pad) {
  g.strokeStyle = color;
  g.beginPath();
  pts.forEach(([x, y], i) => {
    const px = pad + (x / 10) * (W - 2 * pad), py = H - pad - y * (H - 2 * pad);
    i ? g.lineTo(px, py) : g.moveTo(px, py);
  });
  g.stroke();
}

function sweepPlot() {
  const rows = JSON.parse(sweep(num("sigma"), num("n"), num("outliers"), num("seed")));
  const c = $("sweep"), g = c.getContext("2d"), W = c.width, H = c.height, pad = 30;
  g.clearRect(0, 0, W, H);
  g.strokeStyle = "#ccc";
  g.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  line(g, rows.map((r) => [r.threshold, r.macro_f1]), "#1f77b4", W, H, pad);
  line(g, rows.map((r) => [r.threshold, r.overall_coverage]), "#ff7f0e", W, H, pad);
  line(g, rows.map((r) => [r.threshold, r.relevant_coverage]), "#2ca02c", W, H, pad);
  g.fillStyle = "#333";
  g.fillText("percentile 0 .. 10;  y from 0 to 1", pad, H - 8);
  g.fillStyle = "#1f77b4"; g.fillText("macro F1", W - 200, 18);
  g.fillStyle = "#ff7f0e"; g.fillText("coverage", W - 140, 18);
  g.fillStyle = "#2ca02c"; g.fillText("relevant cov.", W - 80, 18);
}

function augPlot() {
  const r = JSON.parse(augment(num("cls"), num("shift"), $("dir").value === "left", num("start"), num("fseed")));
  const c = $("aug"), g = c.getContext("2d"), W = c.width, H = c.height;
  g.clearRect(0, 0, W, H);
  const half = W / 2, bw = (half - 40) / 40, mid = H / 2;
  const draw = (rows, x0, title) => {
    g.fillStyle = "#333";
    g.fillText(title, x0, 12);
    g.strokeStyle = "#ccc";
    g.beginPath(); g.moveTo(x0, mid); g.lineTo(x0 + 40 * bw, mid); g.stroke();
    rows.forEach(([size], i) => {
      const h = (size / 1500) * (mid - 20);
      g.fillStyle = size >= 0 ? "#1f77b4" : "#ff7f0e";
      g.fillRect(x0 + i * bw, size >= 0 ? mid - h : mid, bw - 1, Math.abs(h));
    });
  };
  draw(r.original, 20, "original (up: client to server, down: server to client)");
  draw(r.augmented, half + 10, "translated");
  const start = num("start");
  g.strokeStyle = "#d62728";
  g.beginPath(); g.moveTo(half + 10 + start * bw, 20); g.lineTo(half + 10 + start * bw, H - 10); g.stroke();
  $("augstats").textContent = `${r.class}: ${r.packets} packets, first 40 shown`;
}

await init();
for (const [i, name] of JSON.parse(classes()).entries()) {
  $("cls").add(new Option(name, i));
}
const refreshGmm = () => guard(() => { explorer(); sweepPlot(); });
for (const id of ["sigma", "n", "outliers", "seed"]) $(id).addEventListener("change", refreshGmm);
$("pct").addEventListener("input", () => { $("pctv").textContent = $("pct").value; guard(explorer); });
for (const id of ["cls", "shift", "dir", "start", "fseed"]) $(id).addEventListener("change", () => guard(augPlot));
refreshGmm();
guard(augPlot);
