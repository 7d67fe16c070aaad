// Glue generated by `wasm-bindgen --target web` into ./pkg (see README).
import init, { Phantom } from "./pkg/mmhca_wasm.js";

const $ = (id) => document.getElementById(id);

function draw(id, rgba, side) {
  const canvas = $(id);
  canvas.width = side;
  canvas.height = side;
  const img = new ImageData(new Uint8ClampedArray(rgba), side, side);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

let phantom = null;

function guard(fn) {
  return () => {
    try {
      $("error").textContent = "";
      fn();
    } catch (e) {
      $("error").textContent = String(e);
    }
  };
}

const renderPhantom = guard(() => {
  phantom?.free();
  phantom = new Phantom(Number($("seed").value), Number($("size").value));
  const side = phantom.size();
  draw("t1", phantom.slice_rgba(0), side);
  draw("t2", phantom.slice_rgba(1), side);
  renderDegradation();
  renderAttention();
});

const renderDegradation = guard(() => {
  const d = phantom.degrade(Number($("scale").value));
  draw("lr", d.lr_rgba(), d.lr_size());
  draw("up", d.upscaled_rgba(), phantom.size());
  $("scores").textContent = `PSNR ${d.psnr().toFixed(2)} dB   SSIM ${d.ssim().toFixed(4)}`;
  d.free();
});

const renderAttention = guard(() => {
  const heads = Number($("heads").value);
  $("heads-v").textContent = heads;
  const view = phantom.attention(heads, Number($("ratio").value), Number($("wseed").value));
  draw("attn", view.rgba(), phantom.size());
  $("range").textContent = `A in [${view.lo().toFixed(4)}, ${view.hi().toFixed(4)}]`;
  view.free();
});

await init();
for (const id of ["seed", "size"]) $(id).addEventListener("change", renderPhantom);
$("scale").addEventListener("change", renderDegradation);
for (const id of ["heads", "ratio", "wseed"]) $(id).addEventListener("input", renderAttention);
renderPhantom();
