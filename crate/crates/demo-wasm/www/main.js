import init, { glyph_pair, RingsDemo } from "./pkg/regcgan_demo_wasm.js";

const $ = (id) => document.getElementById(id);
const CLASS_COLORS = ["#1f77b4", "#2ca02c", "#d62728", "#9467bd"];
const GLYPH_RES = 16;

function drawGlyphs() {
  const values = glyph_pair(Number($("family").value), $("transform").value, GLYPH_RES, Math.random() * 2 ** 32 >>> 0);
  const ctx = $("glyphs").getContext("2d");
  const img = ctx.createImageData(2 * GLYPH_RES, GLYPH_RES);
  for (let k = 0; k < 2; k++) {
    for (let i = 0; i < GLYPH_RES; i++) {
      for (let j = 0; j < GLYPH_RES; j++) {
        const v = Math.round((values[k * GLYPH_RES * GLYPH_RES + i * GLYPH_RES + j] + 1) * 127.5);
        const p = 4 * (i * 2 * GLYPH_RES + k * GLYPH_RES + j);
        img.data.set([v, v, v, 255], p);
      }
    }
  }
  const off = new OffscreenCanvas(2 * GLYPH_RES, GLYPH_RES);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, 256, 128);
}

let demo;
let running = false;
let seed = 1;
let path = null;

function weights() {
  return [Number($("lambda").value), Number($("beta").value)];
}

function reset() {
  demo = new RingsDemo(...weights(), seed++);
  path = null;
  drawRings();
}

function toCanvas(x, y) {
  const c = $("rings");
  const scale = c.width / 8;
  return [c.width / 2 + x * scale, c.height / 2 - y * scale];
}

function dot(ctx, x, y, r, color) {
  const [u, v] = toCanvas(x, y);
  ctx.fillStyle = color;
  ctx.fillRect(u - r, v - r, 2 * r, 2 * r);
}

function drawRings() {
  const ctx = $("rings").getContext("2d");
  ctx.clearRect(0, 0, 480, 480);
  const real = demo.real(300);
  ctx.globalAlpha = 0.25;
  for (let i = 0; i < real.length; i += 4) {
    dot(ctx, real[i], real[i + 1], 1.5, CLASS_COLORS[real[i + 3]]);
  }
  ctx.globalAlpha = 1;
  const pairs = path ?? demo.pairs(60, 0);
  ctx.strokeStyle = "#bbb";
  for (let i = 0; i < pairs.length; i += 4) {
    const [a, b] = [toCanvas(pairs[i], pairs[i + 1]), toCanvas(pairs[i + 2], pairs[i + 3])];
    ctx.beginPath();
    ctx.moveTo(...a);
    ctx.lineTo(...b);
    ctx.stroke();
    dot(ctx, pairs[i], pairs[i + 1], 2.5, "#000");
    dot(ctx, pairs[i + 2], pairs[i + 3], 2.5, "#e6550d");
  }
}

function showStats(m) {
  const acc = demo.target_accuracy();
  $("stats").textContent =
    `iteration ${demo.iteration()}  loss_d ${m[1]?.toFixed(3)}  loss_g ${m[2]?.toFixed(3)}  ` +
    `reg_g ${m[3]?.toFixed(4)}  reg_d ${m[4]?.toFixed(4)}  target accuracy ${acc.toFixed(3)}`;
}

function train(steps) {
  path = null;
  const m = demo.train(steps);
  showStats(m);
  drawRings();
}

function loop() {
  if (!running) return;
  train(10);
  requestAnimationFrame(loop);
}

await init();
drawGlyphs();
reset();

$("glyph-new").onclick = drawGlyphs;
$("transform").onchange = drawGlyphs;
$("family").onchange = drawGlyphs;
for (const id of ["lambda", "beta"]) {
  $(id).oninput = () => {
    $(`${id}-v`).textContent = $(id).value;
    demo.set_weights(...weights());
  };
}
$("train").onclick = () => train(100);
$("run").onclick = () => {
  running = !running;
  loop();
};
$("reset").onclick = reset;
$("path").onclick = () => {
  path = demo.path(24, seed++);
  drawRings();
};
