import { ApiError, diagnoseImage, explainUrl, fetchResult } from "./api.js";
import { parseResolution } from "./format.js";
import { History } from "./history.js";
import type { OverlayImages } from "./overlay.js";
import { renderOverlay } from "./overlay.js";
import { renderResults } from "./results.js";
import { wireUploadPanel } from "./upload.js";

const resultsRoot = document.getElementById("results-panel") as HTMLElement;
const overlayRoot = document.getElementById("overlay-panel") as HTMLElement;
const historyRoot = document.getElementById("history-panel") as HTMLElement;
const banner = document.getElementById("banner") as HTMLElement;
const uploadPanel = document.getElementById("upload-panel") as HTMLElement;

const history = new History();
// images belong to this browser session only; the server keeps the record
// JSON, so stored results re-render with the explain overlay instead
const sessionImages = new Map<string, OverlayImages>();

function showBanner(kind: "error" | "info", message: string): void {
  banner.textContent = message;
  banner.className = `banner ${kind}`;
  banner.hidden = false;
}

function clearBanner(): void {
  banner.hidden = true;
  banner.textContent = "";
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `server said ${err.status}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

async function showResult(id: string): Promise<void> {
  const record = await fetchResult(id);
  renderResults(resultsRoot, record);

  let images = sessionImages.get(id);
  if (!images) {
    const members = Object.keys(record.per_model).sort();
    images = {
      originalUrl: null,
      overlayUrl: members.length > 0 ? explainUrl(id, members[0]) : null,
      note: "upload from an earlier session: showing the model explanation view",
    };
  }
  renderOverlay(overlayRoot, record.boxes, images, parseResolution(record.resolution));

  history.add({ id, label: record.final.label, filename: record.filename });
  history.select(id);
  history.render(historyRoot, onHistoryClick);
}

function onHistoryClick(id: string): void {
  clearBanner();
  showResult(id).catch((err) => showBanner("error", describe(err)));
}

async function handleFile(file: File): Promise<void> {
  clearBanner();
  showBanner("info", `analyzing ${file.name}…`);
  try {
    const res = await diagnoseImage(file, file.name);
    sessionImages.set(res.id, {
      originalUrl: file.type === "image/png" ? URL.createObjectURL(file) : null,
      overlayUrl: `data:image/png;base64,${res.overlay_png_base64}`,
      note: file.type === "image/png"
        ? undefined
        : "browsers cannot display PPM directly: showing the analysis overlay",
    });
    await showResult(res.id);
    clearBanner();
  } catch (err) {
    showBanner("error", describe(err));
  }
}

wireUploadPanel(uploadPanel, {
  onFile: handleFile,
  onReject: (message) => showBanner("error", message),
});
history.render(historyRoot, onHistoryClick);
