/**
 * Mock-mode embedding semantics (mirrors the core's synthetic provider).
 *
 * Text embeds as a bag of token anchors; pair prompts matching the spatial
 * grammar embed with role-bound anchors for subject/relation/reference.
 * Synthetic image references ("synthv1:<json>") carry a rect/text manifest;
 * an image request embeds its best-overlapping entry plus optional keyed
 * noise.  Point requests return the zero vector (no semantics in mock mode).
 */

import { anchor, l2Normalize, rawComponents } from "./prng.js";

export const SYNTH_IMAGE_PREFIX = "synthv1:";
export const RELATION_PHRASES = [
  "in front of",
  "behind",
  "on the left of",
  "on the right of",
] as const;
const PSP_TOKENS = ["from", "the", "perspective", "of"];

export type Rect = [number, number, number, number];
export interface ImageEntry {
  rect: Rect;
  text: string;
}

export function canonicalTokens(text: string): string[] {
  return text
    .toLowerCase()
    .replace(/[^a-z0-9]+/g, " ")
    .split(" ")
    .filter((t) => t.length > 0);
}

function findRelation(tokens: string[]): { pos: number; phrase: string[] } | null {
  let best: { pos: number; phrase: string[] } | null = null;
  for (const phrase of RELATION_PHRASES) {
    const ptoks = phrase.split(" ");
    for (let i = 0; i + ptoks.length <= tokens.length; i++) {
      if (ptoks.every((t, k) => tokens[i + k] === t)) {
        if (best === null || i < best.pos) {
          best = { pos: i, phrase: ptoks };
        }
        break;
      }
    }
  }
  return best;
}

export function parseSpatialText(
  text: string,
): { subject: string; relation: string; reference: string } | null {
  const tokens = canonicalTokens(text);
  const hit = findRelation(tokens);
  if (hit === null) {
    return null;
  }
  let head = tokens.slice(0, hit.pos);
  const ref = tokens.slice(hit.pos + hit.phrase.length);
  if (head.length === 0 || ref.length === 0) {
    return null;
  }
  const prefix = [...PSP_TOKENS, ...ref];
  if (head.length > prefix.length && prefix.every((t, k) => head[k] === t)) {
    head = head.slice(prefix.length);
  }
  if (head.length === 0) {
    return null;
  }
  return { subject: head.join(" "), relation: hit.phrase.join(" "), reference: ref.join(" ") };
}

export function decodeSynthImageId(imageId: string): ImageEntry[] {
  if (!imageId.startsWith(SYNTH_IMAGE_PREFIX)) {
    return [];
  }
  const raw = JSON.parse(imageId.slice(SYNTH_IMAGE_PREFIX.length)) as [
    number, number, number, number, string,
  ][];
  return raw.map((e) => ({
    rect: [e[0] / 1000.0, e[1] / 1000.0, e[2] / 1000.0, e[3] / 1000.0],
    text: String(e[4]),
  }));
}

export function rectIou(a: Rect, b: Rect): number {
  const ix0 = Math.max(a[0], b[0]);
  const iy0 = Math.max(a[1], b[1]);
  const ix1 = Math.min(a[2], b[2]);
  const iy1 = Math.min(a[3], b[3]);
  const iw = ix1 - ix0;
  const ih = iy1 - iy0;
  if (iw <= 0 || ih <= 0) {
    return 0;
  }
  const inter = iw * ih;
  const areaA = (a[2] - a[0]) * (a[3] - a[1]);
  const areaB = (b[2] - b[0]) * (b[3] - b[1]);
  const union = areaA + areaB - inter;
  return union > 0 ? inter / union : 0;
}

export class MockSemantics {
  private anchors = new Map<string, Float64Array>();
  private entries = new Map<string, ImageEntry[]>();

  constructor(
    readonly seed: number,
    readonly dim: number,
    readonly noise: number = 0,
  ) {}

  private anchorFor(key: string): Float64Array {
    let vec = this.anchors.get(key);
    if (vec === undefined) {
      vec = anchor(this.seed, key, this.dim);
      this.anchors.set(key, vec);
    }
    return vec;
  }

  textVector(text: string): Float64Array {
    const spatial = parseSpatialText(text);
    if (spatial !== null) {
      const total = new Float64Array(this.dim);
      const subj = this.anchorFor(`subj|${spatial.subject}`);
      const rel = this.anchorFor(`rel|${spatial.relation}`);
      const ref = this.anchorFor(`ref|${spatial.reference}`);
      // Match the core's pairwise order: (subj + rel) + ref.
      for (let i = 0; i < this.dim; i++) {
        total[i] = subj[i] + rel[i] + ref[i];
      }
      return l2Normalize(total);
    }
    const tokens = canonicalTokens(text);
    if (tokens.length === 0) {
      return this.anchorFor("");
    }
    if (tokens.length === 1) {
      return this.anchorFor(tokens[0]);
    }
    const total = Float64Array.from(this.anchorFor(tokens[0]));
    for (let t = 1; t < tokens.length; t++) {
      const a = this.anchorFor(tokens[t]);
      for (let i = 0; i < this.dim; i++) {
        total[i] += a[i];
      }
    }
    return l2Normalize(total);
  }

  embedImage(imageId: string, rect: Rect, _hflip: boolean): Float64Array {
    let entries = this.entries.get(imageId);
    if (entries === undefined) {
      entries = decodeSynthImageId(imageId);
      this.entries.set(imageId, entries);
    }
    let bestText: string | null = null;
    let bestIou = 0.3;
    for (const entry of entries) {
      const iou = rectIou(rect, entry.rect);
      if (iou > bestIou) {
        bestIou = iou;
        bestText = entry.text;
      }
    }
    if (bestText === null) {
      return this.anchorFor("background");
    }
    const base = this.textVector(bestText);
    if (this.noise === 0) {
      return base;
    }
    const key = `noise|${bestText}`;
    let tilt = this.anchors.get(key);
    if (tilt === undefined) {
      tilt = rawComponents(this.seed, key, this.dim);
      this.anchors.set(key, tilt);
    }
    const out = new Float64Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      out[i] = base[i] + this.noise * tilt[i];
    }
    return l2Normalize(out);
  }

  embedPoints(_points: number[][]): Float64Array {
    return new Float64Array(this.dim);
  }
}
