import { MAX_UPLOAD_BYTES } from "./api.js";

export interface UploadHooks {
  /** called with an accepted file; upload stays disabled until it settles */
  onFile: (file: File) => Promise<void>;
  onReject: (message: string) => void;
}

/** The server accepts PNG and PPM; mirror that before sending anything.
 * Browsers usually leave the PPM mime empty, so the extension decides. */
export function isSupportedUpload(name: string, type: string): boolean {
  if (type === "image/png") return true;
  const lower = name.toLowerCase();
  return lower.endsWith(".png") || lower.endsWith(".ppm");
}

export function validateUpload(file: File): string | null {
  if (!isSupportedUpload(file.name, file.type)) {
    return `${file.name}: only PNG and PPM images are supported`;
  }
  if (file.size > MAX_UPLOAD_BYTES) {
    const mib = (file.size / (1024 * 1024)).toFixed(1);
    return `${file.name}: ${mib} MiB exceeds the 32 MiB upload limit`;
  }
  return null;
}

export function wireUploadPanel(panel: HTMLElement, hooks: UploadHooks): void {
  const zone = panel.querySelector(".dropzone") as HTMLElement;
  const input = panel.querySelector("input[type=file]") as HTMLInputElement;
  let busy = false;

  async function accept(file: File): Promise<void> {
    if (busy) return;
    const problem = validateUpload(file);
    if (problem) {
      hooks.onReject(problem);
      return;
    }
    busy = true;
    input.disabled = true;
    zone.classList.add("busy");
    try {
      await hooks.onFile(file);
    } finally {
      busy = false;
      input.disabled = false;
      zone.classList.remove("busy");
    }
  }

  zone.addEventListener("click", () => {
    if (!busy) input.click();
  });
  input.addEventListener("change", () => {
    if (input.files && input.files.length > 0) {
      void accept(input.files[0]);
      input.value = "";
    }
  });

  zone.addEventListener("dragover", (e) => {
    e.preventDefault();
    zone.classList.add("dragging");
  });
  zone.addEventListener("dragleave", () => zone.classList.remove("dragging"));
  zone.addEventListener("drop", (e) => {
    e.preventDefault();
    zone.classList.remove("dragging");
    const files = e.dataTransfer?.files;
    if (!files || files.length === 0) return;
    if (files.length > 1) {
      hooks.onReject("drop a single image at a time");
      return;
    }
    void accept(files[0]);
  });
}
