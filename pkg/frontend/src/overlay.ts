import type { BoxOut } from "./api.js";

export interface OverlayImages {
  /** object URL of the uploaded file, when the browser can display it */
  originalUrl: string | null;
  /** overlay PNG (data URI for fresh results, explain URL for stored ones) */
  overlayUrl: string | null;
  note?: string;
}

export interface PercentRect {
  left: string;
  top: string;
  width: string;
  height: string;
}

/** Box geometry as percentages of the image frame. Percent positioning means
 * the outlines track the displayed size exactly, whatever it is. */
export function boxOutlinePercent(
  box: BoxOut,
  natural: { width: number; height: number },
): PercentRect {
  const pct = (v: number, total: number) => `${((v / total) * 100).toFixed(4)}%`;
  return {
    left: pct(box.x0, natural.width),
    top: pct(box.y0, natural.height),
    width: pct(box.x1 - box.x0, natural.width),
    height: pct(box.y1 - box.y0, natural.height),
  };
}

export function renderOverlay(
  root: HTMLElement,
  boxes: BoxOut[],
  images: OverlayImages,
  natural: { width: number; height: number },
): void {
  root.innerHTML = "";

  const baseUrl = images.originalUrl ?? images.overlayUrl;
  if (!baseUrl) {
    const empty = document.createElement("p");
    empty.className = "overlay-note";
    empty.textContent = "no image available for this result";
    root.appendChild(empty);
    return;
  }

  const viewer = document.createElement("div");
  viewer.className = "viewer";

  const base = document.createElement("img");
  base.className = "viewer-base";
  base.src = baseUrl;
  base.alt = "uploaded image";
  viewer.appendChild(base);

  let top: HTMLImageElement | null = null;
  if (images.originalUrl && images.overlayUrl) {
    top = document.createElement("img");
    top.className = "viewer-overlay";
    top.src = images.overlayUrl;
    top.alt = "lesion overlay";
    viewer.appendChild(top);
  }

  for (const box of boxes) {
    const outline = document.createElement("div");
    outline.className = "box-outline";
    outline.title = `score ${box.score.toFixed(3)}`;
    const rect = boxOutlinePercent(box, natural);
    outline.style.left = rect.left;
    outline.style.top = rect.top;
    outline.style.width = rect.width;
    outline.style.height = rect.height;
    viewer.appendChild(outline);
  }

  root.appendChild(viewer);

  if (top) {
    const controls = document.createElement("label");
    controls.className = "opacity-control";
    controls.textContent = "overlay opacity";
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "100";
    slider.value = "70";
    const apply = () => {
      top.style.opacity = String(Number(slider.value) / 100);
    };
    slider.addEventListener("input", apply);
    apply();
    controls.appendChild(slider);
    root.appendChild(controls);
  }

  if (boxes.length === 0) {
    const notice = document.createElement("p");
    notice.className = "overlay-note";
    notice.textContent = "no lesion regions were located in this image";
    root.appendChild(notice);
  }
  if (images.note) {
    const note = document.createElement("p");
    note.className = "overlay-note";
    note.textContent = images.note;
    root.appendChild(note);
  }
}
