// Console wiring: session setup, instance clicks, realism painting, and the
// comparison slider. Every meter update reads straight from the latest
// service report.

import { ServiceClient } from "./api.js";
import { BetaBrush } from "./brush.js";
import { decodeLabelMap, labelAt, toRgba } from "./labelmap.js";
import { ComparisonSlider } from "./slider.js";
import { SessionView } from "./state.js";

const LATENT_DOWNSAMPLE = 8; // toy preset served by default

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderMeter(view: SessionView): void {
  el<HTMLSpanElement>("cbr-value").textContent = view.meter.cbr.toFixed(5);
  el<HTMLSpanElement>("symbol-count").textContent = String(view.meter.symbolCount);
  const parts = Object.entries(view.meter.breakdown)
    .map(([label, count]) => `${label}: ${count}`)
    .join(", ");
  el<HTMLSpanElement>("breakdown").textContent = parts || "(nothing received)";
}

function renderImage(view: SessionView, slider: ComparisonSlider, client: ServiceClient): void {
  if (!view.imagePngBase64) return;
  const reco = el<HTMLImageElement>("reconstruction");
  reco.src = `data:image/png;base64,${view.imagePngBase64}`;
  const original = el<HTMLImageElement>("original");
  original.src = client.originalUrl(view.sessionId);
  const container = el<HTMLDivElement>("compare");
  const geom = slider.geometry(container.clientWidth);
  el<HTMLDivElement>("divider").style.left = `${geom.dividerX}px`;
  el<HTMLDivElement>("left-pane").style.width = `${geom.leftClipWidth}px`;
}

async function startContentSession(client: ServiceClient, slider: ComparisonSlider): Promise<void> {
  const info = await client.createSession("cct", 0, 0);
  const view = new SessionView(info);
  renderMeter(view);

  const buttons = new Map<string, HTMLButtonElement>();
  const promptLabel = async (label: string) => {
    if (view.isReceived(label)) {
      el<HTMLSpanElement>("notice").textContent = `${label} already received`;
      return; // no network prompt for duplicates
    }
    const resp = await client.prompt(view.sessionId, label);
    view.applyPrompt(resp);
    buttons.get(label)?.classList.add("received");
    renderMeter(view);
    await view.requestDecode(() => client.decode(view.sessionId, {}));
    renderMeter(view);
    renderImage(view, slider, client);
  };

  const list = el<HTMLUListElement>("instances");
  list.replaceChildren();
  for (const label of view.labels) {
    const item = document.createElement("li");
    const button = document.createElement("button");
    button.textContent = label;
    button.addEventListener("click", () => promptLabel(label));
    buttons.set(label, button);
    item.appendChild(button);
    list.appendChild(item);
  }

  // clickable label-map overlay: clicking a region prompts its instance
  const raw = await (await fetch(`${client.originalUrl(view.sessionId).replace("/original.png", "/label_map")}`)).arrayBuffer();
  const labelMap = decodeLabelMap(raw);
  const overlay = el<HTMLCanvasElement>("label-overlay");
  overlay.width = labelMap.width;
  overlay.height = labelMap.height;
  const ctx = overlay.getContext("2d")!;
  ctx.putImageData(new ImageData(toRgba(labelMap), labelMap.width, labelMap.height), 0, 0);
  overlay.addEventListener("click", (ev) => {
    const rect = overlay.getBoundingClientRect();
    const x = Math.floor(((ev.clientX - rect.left) / rect.width) * labelMap.width);
    const y = Math.floor(((ev.clientY - rect.top) / rect.height) * labelMap.height);
    void promptLabel(labelAt(labelMap, x, y));
  });

  // preliminary image from the label map alone
  await view.requestDecode(() => client.decode(view.sessionId, {}));
  renderMeter(view);
  renderImage(view, slider, client);
}

async function startRealismSession(client: ServiceClient, slider: ComparisonSlider): Promise<void> {
  const info = await client.createSession("dpct", 0, 0);
  const view = new SessionView(info);
  const rows = info.image_height / LATENT_DOWNSAMPLE;
  const cols = info.image_width / LATENT_DOWNSAMPLE;
  const brush = new BetaBrush(rows, cols, 8.0);
  renderMeter(view);

  const canvas = el<HTMLCanvasElement>("beta-canvas");
  canvas.width = cols * 8;
  canvas.height = rows * 8;
  const ctx = canvas.getContext("2d")!;

  const redrawBrush = () => {
    const preview = brush.preview(8);
    for (let y = 0; y < preview.length; y++) {
      for (let x = 0; x < preview[y].length; x++) {
        const v = Math.round((preview[y][x] / brush.betaMax) * 255);
        ctx.fillStyle = `rgb(${v},${64},${255 - v})`;
        ctx.fillRect(x, y, 1, 1);
      }
    }
  };
  redrawBrush();

  const decodeCurrent = () =>
    view.requestDecode(() => client.decode(view.sessionId, { beta_map: brush.toBetaMap() })).then((resp) => {
      renderMeter(view);
      renderImage(view, slider, client);
      return resp;
    });

  canvas.addEventListener("pointerdown", async (ev) => {
    const rect = canvas.getBoundingClientRect();
    const col = Math.floor(((ev.clientX - rect.left) / rect.width) * cols);
    const row = Math.floor(((ev.clientY - rect.top) / rect.height) * rows);
    const value = Number(el<HTMLInputElement>("beta-level").value);
    brush.paint(row, col, Number(el<HTMLInputElement>("brush-radius").value), value);
    redrawBrush();
    await decodeCurrent();
  });

  el<HTMLButtonElement>("beta-zero").addEventListener("click", async () => {
    brush.fillAll(0);
    redrawBrush();
    await decodeCurrent();
  });
  el<HTMLButtonElement>("beta-max").addEventListener("click", async () => {
    brush.fillAll(brush.betaMax);
    redrawBrush();
    await decodeCurrent();
  });

  await decodeCurrent();
}

export async function boot(baseUrl = ""): Promise<void> {
  const client = new ServiceClient(baseUrl || window.location.origin);
  const slider = new ComparisonSlider(50);

  const compare = el<HTMLDivElement>("compare");
  let dragging = false;
  compare.addEventListener("pointerdown", (ev) => {
    dragging = true;
    const rect = compare.getBoundingClientRect();
    slider.dragTo(ev.clientX, rect.left, rect.width);
  });
  window.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const rect = compare.getBoundingClientRect();
    slider.dragTo(ev.clientX, rect.left, rect.width);
    const geom = slider.geometry(rect.width);
    el<HTMLDivElement>("divider").style.left = `${geom.dividerX}px`;
    el<HTMLDivElement>("left-pane").style.width = `${geom.leftClipWidth}px`;
  });
  window.addEventListener("pointerup", () => {
    dragging = false;
  });

  el<HTMLButtonElement>("start-cct").addEventListener("click", () => startContentSession(client, slider));
  el<HTMLButtonElement>("start-dpct").addEventListener("click", () => startRealismSession(client, slider));
}

if (typeof window !== "undefined" && typeof document !== "undefined" && document.getElementById("compare")) {
  boot().catch((err) => {
    console.error(err);
    const notice = document.getElementById("notice");
    if (notice) notice.textContent = String(err);
  });
}
