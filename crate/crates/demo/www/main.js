import init, { DemoHandle } from "./pkg/modaladapt_demo.js";

const $ = (id) => document.getElementById(id);
let demo = null;
let demoSeed = null;

function status(text) {
  $("status").textContent = text;
}

// Long calls block the page, so let the status line paint first.
function later(fn) {
  return new Promise((resolve) => setTimeout(() => resolve(fn()), 20));
}

function plot(canvas, series) {
  const g = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  g.clearRect(0, 0, w, h);
  const values = series.flatMap((s) => s.points.filter((v) => v !== null));
  if (values.length === 0) return;
  const n = Math.max(...series.map((s) => s.points.length));
  let lo = Math.min(...values), hi = Math.max(...values);
  if (hi === lo) { hi += 1; lo -= 1; }
  const pad = 30;
  const x = (i) => pad + (i * (w - 2 * pad)) / Math.max(n - 1, 1);
  const y = (v) => h - pad - ((v - lo) * (h - 2 * pad)) / (hi - lo);
  g.fillStyle = "#777";
  g.font = "11px system-ui";
  g.fillText(hi.toPrecision(4), 2, pad - 6);
  g.fillText(lo.toPrecision(4), 2, h - pad + 14);
  for (const s of series) {
    g.strokeStyle = s.color;
    g.lineWidth = 1.5;
    g.beginPath();
    let pen = false;
    s.points.forEach((v, i) => {
      if (v === null) { pen = false; return; }
      if (pen) g.lineTo(x(i), y(v)); else g.moveTo(x(i), y(v));
      pen = true;
    });
    g.stroke();
  }
}

async function train() {
  const seed = Number($("seed").value);
  if (demo === null || seed !== demoSeed) {
    demo = new DemoHandle(seed);
    demoSeed = seed;
  }
  const strategy = $("strategy").value;
  status(`training ${strategy}…`);
  const curve = JSON.parse(await later(() => demo.train(strategy, Number($("epochs").value))));
  plot($("loss"), [
    { points: curve.train, color: "#36c" },
    { points: curve.valid, color: "#c33" },
  ]);
  status(`${curve.strategy}: ${curve.train.length} epochs, best ${curve.best_epoch}, ` +
    `training-speaker MCD ${curve.multispeaker_mcd_db.toFixed(2)} dB (blue train, red validation loss)`);
  $("adapt").disabled = false;
  $("contour").disabled = false;
  $("mcd").textContent = "";
}

async function adapt() {
  status("adapting…");
  const r = JSON.parse(await later(() => demo.adapt($("mode").value, Number($("utts").value))));
  $("mcd").textContent = `MCD ${r.baseline_mcd_db.toFixed(2)} → ${r.adapted_mcd_db.toFixed(2)} dB`;
  status(`${r.mode} adaptation from ${r.utterances} utterances, ${r.train.length} epochs`);
  await contour();
}

async function contour() {
  const c = JSON.parse(demo.contour());
  const series = [
    { points: c.reference, color: "#222" },
    { points: c.baseline, color: "#c33" },
  ];
  if (c.adapted) series.push({ points: c.adapted, color: "#36c" });
  plot($("f0"), series);
}

function guard(fn) {
  return () => fn().catch((e) => status(`error: ${e.message ?? e}`));
}

await init();
$("train").onclick = guard(train);
$("adapt").onclick = guard(adapt);
$("contour").onclick = guard(contour);
status("ready");
