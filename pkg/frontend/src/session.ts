/** Annotation session state. The edit list is the single source of truth:
 * every request body is built from it, and undo restores exact snapshots. */

import type {
  RefineRequest,
  SegmentRequest,
  SegmentationResponse,
  UserEdit,
} from "./types.js";

interface Snapshot {
  edits: UserEdit[];
  response: SegmentationResponse | null;
}

function cloneEdits(edits: readonly UserEdit[]): UserEdit[] {
  return edits.map((e) => ({ ...e }));
}

export class AnnotationSession {
  /** base64 binary PPM of the loaded (already 64x64) image */
  readonly imageB64: string;
  imageId: string | null = null;
  activeClass = 1;
  /** null = classifier decides; an array = explicit class set sent verbatim */
  explicitClasses: number[] | null = null;
  lastResponse: SegmentationResponse | null = null;

  private edits: UserEdit[] = [];
  private readonly undoStack: Snapshot[] = [];
  private readonly hidden = new Set<number>();

  constructor(imageB64: string) {
    this.imageB64 = imageB64;
  }

  /** Defensive copy; callers cannot mutate session state through it. */
  get editList(): UserEdit[] {
    return cloneEdits(this.edits);
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  addEdit(edit: UserEdit): void {
    this.undoStack.push({ edits: cloneEdits(this.edits), response: this.lastResponse });
    this.edits.push({ ...edit });
  }

  /** Restore the exact prior edit list and its cached response.
   * Returns false when there is nothing to undo. */
  undo(): boolean {
    const snap = this.undoStack.pop();
    if (snap === undefined) {
      return false;
    }
    this.edits = snap.edits;
    this.lastResponse = snap.response;
    return true;
  }

  acceptResponse(res: SegmentationResponse): void {
    this.lastResponse = res;
    this.imageId = res.image_id;
  }

  /** Every user point the server echoed must correspond to one of our edits
   * (the server deduplicates repeat clicks, so fewer echoes are fine). */
  echoesMatchEdits(res: SegmentationResponse): boolean {
    return res.points
      .filter((p) => p.source === "user")
      .every((p) =>
        this.edits.some(
          (e) =>
            e.kind === "point" &&
            e.class_id === p.class_id &&
            e.x === p.x &&
            e.y === p.y &&
            (e.positive ?? true) === p.positive,
        ),
      );
  }

  toggleVisibility(classId: number): void {
    if (this.hidden.has(classId)) {
      this.hidden.delete(classId);
    } else {
      this.hidden.add(classId);
    }
  }

  isVisible(classId: number): boolean {
    return !this.hidden.has(classId);
  }

  segmentRequest(): SegmentRequest {
    const req: SegmentRequest = { image: this.imageB64 };
    if (this.explicitClasses !== null) {
      req.classes = [...this.explicitClasses];
    }
    return req;
  }

  refineRequest(): RefineRequest {
    const req: RefineRequest = { edits: cloneEdits(this.edits) };
    if (this.imageId !== null) {
      req.image_id = this.imageId;
    } else {
      req.image = this.imageB64;
    }
    if (this.explicitClasses !== null) {
      req.classes = [...this.explicitClasses];
    }
    return req;
  }
}
