/** DOM wiring: file loading, canvas interaction, class controls. All pixel
 * math and request shaping lives in the pure modules; this file only blits
 * frames, draws marker/box specs, and forwards events. */

import { ApiClient, RefineScheduler } from "./api.js";
import { bytesToBase64, encodePpm } from "./netpbm.js";
import { cssColor } from "./palette.js";
import {
  boxSpec,
  composeOverlay,
  decodeMasks,
  markerSpecs,
  type BoxSpec,
  type Frame,
} from "./render.js";
import { AnnotationSession } from "./session.js";
import type { UserEdit } from "./types.js";

const IMAGE_SIZE = 64;
const SCALE = 8; // display canvas is IMAGE_SIZE * SCALE square
const DRAG_THRESHOLD = 3; // screen pixels before a press becomes a box drag

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
};

const canvas = $<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d")!;
const fileInput = $<HTMLInputElement>("file");
const banner = $<HTMLDivElement>("banner");
const statusLine = $<HTMLSpanElement>("status");
const classPanel = $<HTMLDivElement>("classes");
const undoButton = $<HTMLButtonElement>("undo");
const explicitSwitch = $<HTMLInputElement>("explicit");
const bypassBadge = $<HTMLSpanElement>("bypass");

const api = new ApiClient("");

let session: AnnotationSession | null = null;
let baseFrame: Frame | null = null;
let dragStart: { x: number; y: number } | null = null;
let dragPreview: BoxSpec | null = null;

function showError(message: string): void {
  banner.textContent = message;
  banner.hidden = false;
}

function clearError(): void {
  banner.hidden = true;
}

function setStatus(text: string): void {
  statusLine.textContent = text;
}

const scheduler = new RefineScheduler(
  (req) => api.refine(req),
  (res, req) => {
    if (session === null) return;
    // an undo while this request was in flight makes it stale; the cached
    // response restored by the undo is already on screen
    if (JSON.stringify(req.edits) !== JSON.stringify(session.editList)) return;
    if (!session.echoesMatchEdits(res)) {
      console.warn("server echoed a user point that matches no local edit");
    }
    session.acceptResponse(res);
    setStatus("");
    render();
    renderClassPanel();
  },
  (err) => {
    setStatus("");
    showError(err instanceof Error ? err.message : String(err));
  },
);

// ---------------------------------------------------------------------------
// rendering

function render(): void {
  if (baseFrame === null) return;
  const res = session?.lastResponse ?? null;
  const visible = (c: number) => session?.isVisible(c) ?? true;
  const frame =
    res === null ? baseFrame : composeOverlay(baseFrame, decodeMasks(res), visible);

  const off = document.createElement("canvas");
  off.width = frame.width;
  off.height = frame.height;
  off.getContext("2d")!.putImageData(
    new ImageData(frame.data, frame.width, frame.height), 0, 0);

  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);

  if (res !== null) {
    for (const m of markerSpecs(res.points, visible)) {
      const cx = (m.x + 0.5) * SCALE;
      const cy = (m.y + 0.5) * SCALE;
      const half = m.size / 2;
      ctx.lineWidth = 2;
      if (m.shape === "solid") {
        ctx.fillStyle = cssColor(m.color);
        ctx.fillRect(cx - half, cy - half, m.size, m.size);
        ctx.strokeStyle = m.border;
        ctx.strokeRect(cx - half, cy - half, m.size, m.size);
      } else {
        ctx.strokeStyle = cssColor(m.color);
        ctx.strokeRect(cx - half, cy - half, m.size, m.size);
      }
    }
  }

  if (session !== null) {
    for (const box of latestBoxes(session.editList)) {
      if (!session.isVisible(box.classId)) continue;
      drawBox(box, false);
    }
  }
  if (dragPreview !== null) {
    drawBox(dragPreview, true);
  }
}

function drawBox(box: BoxSpec, dashed: boolean): void {
  ctx.strokeStyle = cssColor(box.color);
  ctx.lineWidth = 2;
  ctx.setLineDash(dashed ? [6, 4] : []);
  ctx.strokeRect(
    box.x0 * SCALE,
    box.y0 * SCALE,
    (box.x1 - box.x0 + 1) * SCALE,
    (box.y1 - box.y0 + 1) * SCALE,
  );
  ctx.setLineDash([]);
}

/** The service keeps one box per class (newest wins); mirror that here. */
function latestBoxes(edits: UserEdit[]): BoxSpec[] {
  const latest = new Map<number, BoxSpec>();
  for (const e of edits) {
    if (e.kind === "box") {
      latest.set(e.class_id, boxSpec(e.class_id, e.x0, e.y0, e.x1, e.y1));
    }
  }
  return [...latest.values()];
}

// ---------------------------------------------------------------------------
// class panel

function knownClassIds(): number[] {
  const res = session?.lastResponse;
  if (!res) return [];
  return Object.keys(res.probs).map(Number).sort((a, b) => a - b);
}

function renderClassPanel(): void {
  classPanel.textContent = "";
  if (session === null) return;
  const res = session.lastResponse;
  for (const id of knownClassIds()) {
    const row = document.createElement("div");
    row.className = "class-row";

    const active = document.createElement("input");
    active.type = "radio";
    active.name = "active-class";
    active.checked = session.activeClass === id;
    active.title = "edit target";
    active.addEventListener("change", () => {
      session!.activeClass = id;
    });

    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = cssColor(
      (() => {
        try {
          return markerSpecs([{ class_id: id, x: 0, y: 0, positive: true, source: "auto" }],
            () => true)[0]!.color;
        } catch {
          return [160, 160, 160] as const;
        }
      })(),
    );

    const label = document.createElement("span");
    const prob = res?.probs[String(id)];
    const decoded = res?.classes.includes(id) ?? false;
    label.textContent =
      `class ${id}` +
      (prob !== undefined ? ` (p=${prob.toFixed(2)})` : "") +
      (decoded ? "" : " — off");

    const eye = document.createElement("input");
    eye.type = "checkbox";
    eye.checked = session.isVisible(id);
    eye.title = "visible";
    eye.addEventListener("change", () => {
      session!.toggleVisibility(id);
      render();
    });

    row.append(active, swatch, label, eye);

    if (session.explicitClasses !== null) {
      const member = document.createElement("button");
      const inSet = currentExplicitSet().has(id);
      member.textContent = inSet ? "drop" : "add";
      member.title = "toggle membership in the explicit class set";
      member.addEventListener("click", () => {
        submitEdit({ kind: "class_toggle", class_id: id });
      });
      row.append(member);
    }
    classPanel.append(row);
  }
}

/** Explicit set after replaying toggles, mirroring the server's view. */
function currentExplicitSet(): Set<number> {
  const set = new Set(session?.explicitClasses ?? []);
  for (const e of session?.editList ?? []) {
    if (e.kind === "class_toggle") {
      if (set.has(e.class_id)) set.delete(e.class_id);
      else set.add(e.class_id);
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// edits

function submitEdit(edit: UserEdit): void {
  if (session === null) return;
  clearError();
  session.addEdit(edit);
  setStatus("refining…");
  scheduler.submit(session.refineRequest());
  render();
}

function imageCoords(clientX: number, clientY: number): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  const x = Math.floor(((clientX - rect.left) / rect.width) * IMAGE_SIZE);
  const y = Math.floor(((clientY - rect.top) / rect.height) * IMAGE_SIZE);
  return {
    x: Math.min(Math.max(x, 0), IMAGE_SIZE - 1),
    y: Math.min(Math.max(y, 0), IMAGE_SIZE - 1),
  };
}

canvas.addEventListener("mousedown", (ev) => {
  if (session === null) return;
  dragStart = { x: ev.clientX, y: ev.clientY };
});

canvas.addEventListener("mousemove", (ev) => {
  if (session === null || dragStart === null) return;
  const dx = ev.clientX - dragStart.x;
  const dy = ev.clientY - dragStart.y;
  if (Math.abs(dx) < DRAG_THRESHOLD && Math.abs(dy) < DRAG_THRESHOLD && dragPreview === null) {
    return;
  }
  const a = imageCoords(dragStart.x, dragStart.y);
  const b = imageCoords(ev.clientX, ev.clientY);
  dragPreview = boxSpec(session.activeClass, a.x, a.y, b.x, b.y);
  render();
});

canvas.addEventListener("mouseup", (ev) => {
  if (session === null || dragStart === null) return;
  const start = dragStart;
  dragStart = null;
  if (dragPreview !== null) {
    const box = dragPreview;
    dragPreview = null;
    submitEdit({
      kind: "box",
      class_id: box.classId,
      x0: box.x0,
      y0: box.y0,
      x1: box.x1,
      y1: box.y1,
    });
    return;
  }
  const at = imageCoords(start.x, start.y);
  submitEdit({
    kind: "point",
    class_id: session.activeClass,
    x: at.x,
    y: at.y,
    positive: ev.button !== 2,
  });
});

canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());

undoButton.addEventListener("click", () => {
  if (session === null || !session.undo()) return;
  clearError();
  render();
  renderClassPanel();
});

explicitSwitch.addEventListener("change", () => {
  if (session === null) return;
  if (explicitSwitch.checked) {
    session.explicitClasses = session.lastResponse?.classes ?? [];
    bypassBadge.hidden = false;
  } else {
    session.explicitClasses = null;
    bypassBadge.hidden = true;
  }
  setStatus("refining…");
  scheduler.submit(session.refineRequest());
  renderClassPanel();
});

// ---------------------------------------------------------------------------
// image loading

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (file === undefined) return;
  clearError();
  try {
    const bitmap = await createImageBitmap(file);
    const off = document.createElement("canvas");
    off.width = IMAGE_SIZE;
    off.height = IMAGE_SIZE;
    const octx = off.getContext("2d")!;
    // any browser-decodable image lands here as a 64x64 PPM
    octx.drawImage(bitmap, 0, 0, IMAGE_SIZE, IMAGE_SIZE);
    const rgba = octx.getImageData(0, 0, IMAGE_SIZE, IMAGE_SIZE);
    baseFrame = {
      width: IMAGE_SIZE,
      height: IMAGE_SIZE,
      data: new Uint8ClampedArray(rgba.data),
    };
    const ppm = encodePpm(rgba.data, IMAGE_SIZE, IMAGE_SIZE);
    session = new AnnotationSession(bytesToBase64(ppm));
    render();
    setStatus("segmenting…");
    const res = await api.segment(session.segmentRequest());
    session.acceptResponse(res);
    setStatus("");
    render();
    renderClassPanel();
  } catch (err) {
    setStatus("");
    showError(err instanceof Error ? err.message : String(err));
  }
});

// ---------------------------------------------------------------------------
// boot

void (async () => {
  try {
    const health = await api.health();
    setStatus(`model ${health.model.slice(0, 12)}…`);
  } catch {
    showError("service unreachable — start it with: promptseg serve --ckpt <file> --addr 127.0.0.1:8000");
  }
})();

export {}; // keep this file a module
