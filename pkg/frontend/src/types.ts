export type Rgb = [number, number, number];

export interface SessionCreated {
  id: string;
  labels_png: string;     // base64 PNG of the segmenter's label map
  sp_labels_png: string;  // base64 PNG of the network-completed label map
  palette: Rgb[];
  categories: string[];
}

export interface SessionState extends SessionCreated {
  image_png: string;
  mask_png: string;
  history_len: number;
  expires_at: number;
}

export interface RenderResult {
  seq: number;
  image_png: string;
  thumbnail_png: string;
}

export interface HistoryEntry {
  seq: number;
  labels_png: string;
  image_png: string;
}

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}
