import init, { Demo } from "./pkg/near_web.js";

const RES = 48;
const $ = (id) => document.getElementById(id);
let demo = null;
let smoothDice = null;

function drawSlice() {
  const px = demo.slice_rgba(Number($("depth").value));
  const img = new ImageData(new Uint8ClampedArray(px), RES, RES);
  const tmp = new OffscreenCanvas(RES, RES);
  tmp.getContext("2d").putImageData(img, 0, 0);
  const ctx = $("slice").getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, $("slice").width, $("slice").height);
}

function drawCurve() {
  const data = demo.nsd_curve(4.0, 17);
  const c = $("curve");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const x = (t) => 30 + (t / 4.0) * (c.width - 40);
  const y = (v) => c.height - 20 - v * (c.height - 30);
  ctx.strokeStyle = "#888";
  ctx.strokeRect(30, 10, c.width - 40, c.height - 30);
  ctx.fillText("NSD vs tolerance (mm)", 40, 22);
  for (const [col, color] of [[1, "#e62828"], [2, "#3c8cff"]]) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    let started = false;
    for (let i = 0; i < data.length; i += 3) {
      const v = data[i + col];
      if (Number.isNaN(v)) continue;
      started ? ctx.lineTo(x(data[i]), y(v)) : ctx.moveTo(x(data[i]), y(v));
      started = true;
    }
    ctx.stroke();
  }
}

function showStats() {
  let s = `distorted Dice ${demo.distortion_dice.toFixed(3)}`;
  if (smoothDice !== null) s += `, smoothed Dice ${smoothDice.toFixed(3)}`;
  $("stats").textContent = s;
}

function draw() {
  demo?.free();
  demo = new Demo(Number($("seed").value), RES);
  smoothDice = null;
  drawSlice();
  drawCurve();
  showStats();
}

await init();
$("depth").max = RES - 1;
$("draw").onclick = draw;
$("depth").oninput = drawSlice;
$("smooth").onclick = () => {
  smoothDice = demo.smooth(Number($("radius").value));
  drawSlice();
  drawCurve();
  showStats();
};
draw();
