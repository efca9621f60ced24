// Typed client for the ensel JSON API. Every number the UI shows comes out
// of these response shapes; nothing is recomputed client-side.

export interface FinalOut {
  label: string;
  probability: number;
}

export interface BoxOut {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  score: number;
}

export interface TimingOut {
  decode: number;
  detect: number;
  classify: number;
  vote: number;
  visualize: number;
  encode: number;
  total: number;
}

export interface DiagnoseResponse {
  id: string;
  final: FinalOut;
  distribution: Record<string, number>;
  per_model: Record<string, Record<string, number>>;
  boxes: BoxOut[];
  overlay_png_base64: string;
  timing_ms: TimingOut;
}

export interface ResultResponse {
  id: string;
  final: FinalOut;
  distribution: Record<string, number>;
  per_model: Record<string, Record<string, number>>;
  boxes: BoxOut[];
  timing_ms: TimingOut;
  filename: string;
  resolution: string;
  received_at: string;
}

export class ApiError extends Error {
  status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

// mirrors the server's upload cap; oversize files are rejected before any
// request is made
export const MAX_UPLOAD_BYTES = 32 * 1024 * 1024;

let apiBase = "";

export function setApiBase(base: string): void {
  apiBase = base.replace(/\/+$/, "");
}

async function raiseForStatus(res: Response): Promise<void> {
  if (res.ok) return;
  let message = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, message);
}

export async function diagnoseImage(
  file: Blob,
  filename: string,
): Promise<DiagnoseResponse> {
  const form = new FormData();
  form.append("file", file, filename);
  const res = await fetch(`${apiBase}/api/diagnose`, {
    method: "POST",
    body: form,
  });
  await raiseForStatus(res);
  return res.json();
}

export async function fetchResult(id: string): Promise<ResultResponse> {
  const res = await fetch(`${apiBase}/api/results/${encodeURIComponent(id)}`);
  await raiseForStatus(res);
  return res.json();
}

export function explainUrl(id: string, model: string): string {
  const q = new URLSearchParams({ model });
  return `${apiBase}/api/explain/${encodeURIComponent(id)}?${q}`;
}
