import init, { nearestNeighbours, rocForSeparation, attentionGates } from "./pkg/ragclf_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fail(out, e) {
  out.textContent = "error: " + e;
}

// nearest neighbours

let query = { x: 0.5, y: 0.5 };
const SPAN = 5;

function toCanvas(c, x, y) {
  return [(x + SPAN) / (2 * SPAN) * c.width, (SPAN - y) / (2 * SPAN) * c.height];
}

function drawNeighbours() {
  const c = $("nn-plot"), ctx = c.getContext("2d"), out = $("nn-out");
  let view;
  try {
    view = JSON.parse(nearestNeighbours(num("nn-seed"), 60, num("nn-sep"), query.x, query.y, num("nn-k")));
  } catch (e) {
    return fail(out, e);
  }
  ctx.clearRect(0, 0, c.width, c.height);
  const byId = new Map();
  for (const p of view.points) {
    byId.set(p.id, p);
    const [cx, cy] = toCanvas(c, p.x, p.y);
    ctx.fillStyle = p.label === 1 ? "#2266cc" : "#cc4422";
    ctx.beginPath();
    ctx.arc(cx, cy, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  const [qx, qy] = toCanvas(c, query.x, query.y);
  ctx.strokeStyle = "#999";
  for (const n of view.neighbours) {
    const p = byId.get(n.id);
    const [cx, cy] = toCanvas(c, p.x, p.y);
    ctx.beginPath();
    ctx.moveTo(qx, qy);
    ctx.lineTo(cx, cy);
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(cx, cy, 6, 0, 2 * Math.PI);
    ctx.stroke();
  }
  ctx.fillStyle = "#000";
  ctx.fillRect(qx - 4, qy - 4, 8, 8);
  out.textContent =
    `query (${query.x.toFixed(2)}, ${query.y.toFixed(2)})\n\nrank  id          distance\n` +
    view.neighbours.map((n, i) => `${String(i + 1).padStart(4)}  ${n.id}  ${n.distance.toFixed(4)}`).join("\n");
}

$("nn-plot").addEventListener("click", (ev) => {
  const c = ev.target, r = c.getBoundingClientRect();
  query = {
    x: ((ev.clientX - r.left) / r.width) * 2 * SPAN - SPAN,
    y: SPAN - ((ev.clientY - r.top) / r.height) * 2 * SPAN,
  };
  drawNeighbours();
});
for (const id of ["nn-k", "nn-sep", "nn-seed"]) $(id).addEventListener("input", drawNeighbours);

// ROC

function drawRoc() {
  const c = $("roc-plot"), ctx = c.getContext("2d"), out = $("roc-out");
  out.textContent = "training...";
  let view;
  try {
    view = JSON.parse(rocForSeparation(num("roc-seed"), num("roc-sep"), num("roc-dim"), num("roc-epochs")));
  } catch (e) {
    return fail(out, e);
  }
  const W = c.width, H = c.height;
  ctx.clearRect(0, 0, W, H);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  ctx.moveTo(0, H);
  ctx.lineTo(W, 0);
  ctx.stroke();
  ctx.strokeStyle = "#2266cc";
  ctx.lineWidth = 2;
  ctx.beginPath();
  view.roc.forEach((p, i) => {
    const x = p.fpr * W, y = H - p.tpr * H;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.lineWidth = 1;
  const auc = view.auc === null ? "undefined" : view.auc.toFixed(4);
  out.textContent = `test records  ${view.test_size}\naccuracy      ${view.accuracy.toFixed(4)}\nAUC           ${auc}`;
}

$("roc-sep").addEventListener("input", () => ($("roc-sep-val").textContent = $("roc-sep").value));
$("roc-run").addEventListener("click", drawRoc);

// attention

function drawGates() {
  const c = $("att-plot"), ctx = c.getContext("2d"), out = $("att-out");
  const e = $("att-e").value.split(",").map((s) => Number(s.trim()));
  let view;
  try {
    view = JSON.parse(attentionGates(new Float64Array(e), num("att-scale"), num("att-seed")));
  } catch (err) {
    return fail(out, err);
  }
  const W = c.width, H = c.height, d = view.gates.length, bw = W / d;
  ctx.clearRect(0, 0, W, H);
  view.gates.forEach((a, i) => {
    ctx.fillStyle = "#2266cc";
    ctx.fillRect(i * bw + 4, H - a * H, bw - 8, a * H);
  });
  ctx.strokeStyle = "#cc4422";
  ctx.beginPath();
  ctx.moveTo(0, H - H / d);
  ctx.lineTo(W, H - H / d);
  ctx.stroke();
  out.textContent =
    " i      e      gate   refined\n" +
    view.gates
      .map((a, i) => `${String(i).padStart(2)} ${e[i].toFixed(3).padStart(6)} ${a.toFixed(4).padStart(8)} ${view.refined[i].toFixed(4).padStart(8)}`)
      .join("\n");
}

for (const id of ["att-e", "att-scale", "att-seed"]) $(id).addEventListener("input", drawGates);

await init();
drawNeighbours();
drawGates();
drawRoc();
