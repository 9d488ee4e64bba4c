/** Wire types for the segmentation service (mirrors schema/api.json). */

export interface PointEdit {
  kind: "point";
  class_id: number;
  x: number;
  y: number;
  positive?: boolean; // omitted means positive, matching the service default
}

export interface BoxEdit {
  kind: "box";
  class_id: number;
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface ClassToggleEdit {
  kind: "class_toggle";
  class_id: number;
}

export type UserEdit = PointEdit | BoxEdit | ClassToggleEdit;

export interface Point {
  class_id: number;
  x: number;
  y: number;
  positive: boolean;
  source: "auto" | "user";
}

export interface SegmentRequest {
  image: string; // base64 binary PPM
  classes?: number[];
}

export interface RefineRequest {
  image?: string; // base64 binary PPM (fallback when the server's cache is cold)
  image_id?: string; // sha256 returned by a previous response
  classes?: number[];
  edits: UserEdit[];
}

export interface SegmentationResponse {
  image_id: string;
  width: number;
  height: number;
  classes: number[];
  probs: Record<string, number>; // class id (decimal string) -> presence probability
  masks: Record<string, string>; // class id (decimal string) -> base64 binary PGM (0/255)
  labels: string; // base64 binary PGM, pixel value = class id
  points: Point[];
}

export interface HealthResponse {
  status: "ok";
  model: string; // sha256 of the served checkpoint
}

export interface ErrorResponse {
  error: string;
}
