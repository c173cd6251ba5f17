import init, { stationaryMap, simulate, fitForecast } from "./pkg/stable_gvar_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

let mapZ = null;
let series = null;

function call(fn, req) {
  return JSON.parse(fn(JSON.stringify(req)));
}

function showError(el, e) {
  el.innerHTML = `<p class="err">${e.message ?? e}</p>`;
}

function matrixTable(rows, title, digits = 3) {
  const body = rows.map((r) => `<tr>${r.map((v) => `<td>${v.toFixed(digits)}</td>`).join("")}</tr>`).join("");
  return `<div><strong>${title}</strong><table class="mat">${body}</table></div>`;
}

function heatTable(rows, title, labels) {
  const head = `<tr><td></td>${labels.map((l) => `<td>${l}</td>`).join("")}</tr>`;
  const body = rows
    .map((r, i) => `<tr><td>${labels[i]}</td>${r.map((v) => `<td style="background:rgba(31,119,180,${v})">${v.toFixed(2)}</td>`).join("")}</tr>`)
    .join("");
  return `<div><strong>${title}</strong><table class="mat">${head}${body}</table></div>`;
}

// Stationary map

function randomZ(m, p) {
  const gauss = () => Math.sqrt(-2 * Math.log(1 - Math.random())) * Math.cos(2 * Math.PI * Math.random());
  return Array.from({ length: p }, () => Array.from({ length: m }, () => Array.from({ length: m }, gauss)));
}

function drawSpectrum(eigs, u) {
  const c = $("map-canvas");
  const ctx = c.getContext("2d");
  const s = c.width / 2.4;
  const o = c.width / 2;
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#bbb";
  ctx.beginPath();
  ctx.moveTo(0, o);
  ctx.lineTo(c.width, o);
  ctx.moveTo(o, 0);
  ctx.lineTo(o, c.height);
  ctx.stroke();
  for (const [r, color] of [[1, "#333"], [u, "#d62728"]]) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.arc(o, o, r * s, 0, 2 * Math.PI);
    ctx.stroke();
  }
  ctx.fillStyle = "#1f77b4";
  for (const [re, im] of eigs) {
    ctx.beginPath();
    ctx.arc(o + re * s, o - im * s, 4, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function updateMap() {
  const u = num("map-u");
  $("map-u-val").textContent = u.toFixed(2);
  try {
    const r = call(stationaryMap, { z: mapZ, u });
    drawSpectrum(r.eigenvalues, u);
    $("map-out").innerHTML =
      r.phi.map((b, s) => matrixTable(b, `Φ${s + 1}`)).join("") +
      `<p>ρ(Z) = ${r.rho_z.toFixed(4)}, ρ(Φ) = ${r.rho.toFixed(4)}</p>`;
  } catch (e) {
    showError($("map-out"), e);
  }
}

// Simulation

function drawLines(canvas, lines, bands = null, split = null) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const all = lines.flatMap((l) => l.values.filter((v) => v !== null));
  if (bands) all.push(...bands.lo, ...bands.hi);
  const lo = Math.min(...all);
  const hi = Math.max(...all);
  const len = Math.max(...lines.map((l) => l.values.length));
  const x = (t) => 5 + (t / Math.max(len - 1, 1)) * (canvas.width - 10);
  const y = (v) => canvas.height - 5 - ((v - lo) / (hi - lo || 1)) * (canvas.height - 10);
  if (bands) {
    ctx.fillStyle = "rgba(214,39,40,0.2)";
    ctx.beginPath();
    bands.hi.forEach((v, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, x(bands.start + i), y(v)));
    for (let i = bands.lo.length - 1; i >= 0; i--) ctx.lineTo(x(bands.start + i), y(bands.lo[i]));
    ctx.closePath();
    ctx.fill();
  }
  if (split !== null) {
    ctx.strokeStyle = "#999";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(x(split), 0);
    ctx.lineTo(x(split), canvas.height);
    ctx.stroke();
    ctx.setLineDash([]);
  }
  for (const l of lines) {
    ctx.strokeStyle = l.color;
    ctx.beginPath();
    let started = false;
    l.values.forEach((v, t) => {
      if (v === null) return;
      (started ? ctx.lineTo : ctx.moveTo).call(ctx, x(t), y(v));
      started = true;
    });
    ctx.stroke();
  }
}

function runSimulation() {
  const req = { m: num("sim-m"), p: num("sim-p"), r: num("sim-r"), n: num("sim-n"), seed: num("sim-seed") };
  try {
    const r = call(simulate, req);
    series = r.series;
    const m = req.m;
    drawLines($("sim-canvas"), Array.from({ length: m }, (_, k) => ({ values: series.map((row) => row[k]), color: COLORS[k % COLORS.length] })));
    const directed = r.directed.map(([a, b, s]) => `y${a + 1} → y${b + 1} (lag ${s})`).join(", ") || "none";
    const undirected = r.undirected.map(([a, b]) => `y${a + 1} ↔ y${b + 1}`).join(", ") || "none";
    $("sim-out").innerHTML = `<p>ρ = ${r.rho.toFixed(3)}. Directed: ${directed}. Undirected: ${undirected}.</p>`;
    $("fit-var").innerHTML = Array.from({ length: m }, (_, k) => `<option value="${k}">y${k + 1}</option>`).join("");
  } catch (e) {
    showError($("sim-out"), e);
  }
}

// Fit and forecast

let lastFit = null;

function drawFan() {
  if (!lastFit) return;
  const k = num("fit-var");
  const tail = series.slice(-60).map((row) => row[k]);
  const bands = lastFit.bands.filter((b) => b.variable === k);
  const h = bands.length;
  const observed = [...tail, ...Array(h).fill(null)];
  const median = [...Array(tail.length - 1).fill(null), tail[tail.length - 1], ...bands.map((b) => b.q50)];
  drawLines(
    $("fit-canvas"),
    [
      { values: observed, color: "#333" },
      { values: median, color: "#d62728" },
    ],
    { start: tail.length, lo: bands.map((b) => b.q05), hi: bands.map((b) => b.q95) },
    tail.length - 1,
  );
}

function runFit() {
  if (!series) runSimulation();
  const samples = num("fit-samples");
  const req = { series, p: num("sim-p"), warmup: num("fit-warmup"), samples, thin: Math.max(1, Math.floor(samples / 200)), seed: 1, horizon: num("fit-h") };
  $("fit-status").textContent = "fitting...";
  // Let the status paint before the blocking call.
  setTimeout(() => {
    const t0 = performance.now();
    try {
      lastFit = call(fitForecast, req);
      const secs = ((performance.now() - t0) / 1000).toFixed(1);
      $("fit-status").textContent = `${lastFit.draws} draws in ${secs}s, mean acceptance ${lastFit.mean_accept_stat.toFixed(2)}, ${lastFit.divergences} divergences`;
      const labels = series[0].map((_, k) => `y${k + 1}`);
      $("fit-out").innerHTML =
        lastFit.directed.map((d, s) => heatTable(d, `P(column → row), lag ${s + 1}`, labels)).join("") +
        heatTable(lastFit.undirected, "P(edge)", labels);
      drawFan();
    } catch (e) {
      $("fit-status").textContent = "";
      showError($("fit-out"), e);
    }
  }, 20);
}

async function main() {
  await init();
  const resetZ = () => {
    mapZ = randomZ(num("map-m"), num("map-p"));
    updateMap();
  };
  $("map-random").addEventListener("click", resetZ);
  $("map-m").addEventListener("change", resetZ);
  $("map-p").addEventListener("change", resetZ);
  $("map-u").addEventListener("input", updateMap);
  $("sim-run").addEventListener("click", runSimulation);
  $("fit-run").addEventListener("click", runFit);
  $("fit-var").addEventListener("change", drawFan);
  resetZ();
  runSimulation();
}

main();
