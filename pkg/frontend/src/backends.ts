/**
 * Embedding backends behind the wire protocol.
 *
 * "mock" reproduces the core pipeline's synthetic provider bit for bit so
 * cross-component integration tests can compare detections exactly.
 * "bytehash" is the offline stand-in for a real pretrained encoder: it
 * embeds actual image file bytes (and point statistics) through the same
 * keyed-stream machinery.  Both are deterministic.
 */

import { createHash } from "node:crypto";
import { readFileSync } from "node:fs";
import { resolve, sep } from "node:path";

import { anchor, fnv1a64, l2Normalize, rawComponents, SplitMix64 } from "./prng.js";
import { MockSemantics, Rect } from "./semantics.js";

export interface Backend {
  readonly name: string;
  readonly dim: number;
  embedText(texts: string[]): Float64Array[];
  embedImage(imageId: string, rect: Rect, hflip: boolean): Float64Array;
  embedPoints(points: number[][]): Float64Array;
}

export class MockBackend implements Backend {
  readonly name = "mock";
  private semantics: MockSemantics;

  constructor(
    readonly seed: number,
    readonly dim: number,
    noise: number = 0,
  ) {
    this.semantics = new MockSemantics(seed, dim, noise);
  }

  embedText(texts: string[]): Float64Array[] {
    return texts.map((t) => this.semantics.textVector(t));
  }

  embedImage(imageId: string, rect: Rect, hflip: boolean): Float64Array {
    return this.semantics.embedImage(imageId, rect, hflip);
  }

  embedPoints(points: number[][]): Float64Array {
    return this.semantics.embedPoints(points);
  }
}

/** Deterministic content embedder over real file bytes. */
export class ByteHashBackend implements Backend {
  readonly name = "bytehash";

  constructor(
    readonly imageRoot: string,
    readonly seed: number,
    readonly dim: number,
  ) {}

  private keyedVector(key: string): Float64Array {
    return anchor(this.seed, key, this.dim);
  }

  embedText(texts: string[]): Float64Array[] {
    return texts.map((t) => this.keyedVector(`model|text|${t.toLowerCase().trim()}`));
  }

  embedImage(imageId: string, rect: Rect, hflip: boolean): Float64Array {
    const root = resolve(this.imageRoot);
    const path = resolve(root, imageId);
    if (!path.startsWith(root + sep) && path !== root) {
      throw new Error(`image id escapes the image root: ${imageId}`);
    }
    const digest = createHash("sha256").update(readFileSync(path)).digest("hex");
    const q = rect.map((v) => Math.floor(v * 1000 + 0.5));
    return this.keyedVector(
      `model|image|${digest}|${q[0]},${q[1]},${q[2]},${q[3]}|${hflip ? 1 : 0}`,
    );
  }

  embedPoints(points: number[][]): Float64Array {
    // Summarize the cloud by count plus quantized centroid, then key a vector.
    let cx = 0;
    let cy = 0;
    let cz = 0;
    for (const p of points) {
      cx += p[0];
      cy += p[1];
      cz += p[2];
    }
    const n = Math.max(points.length, 1);
    const q = [cx / n, cy / n, cz / n].map((v) => Math.floor(v * 100 + 0.5));
    return this.keyedVector(`model|points|${points.length}|${q[0]},${q[1]},${q[2]}`);
  }
}

/** Self-check constants for the shared stream (used by tests). */
export const REFERENCE = {
  fnvEmpty: 0xcbf29ce484222325n,
  splitmixZeroFirst: 0xe220a8397b1dcdafn,
};

export function splitmixSelfTest(): boolean {
  if (fnv1a64(new Uint8Array(0)) !== REFERENCE.fnvEmpty) {
    return false;
  }
  const sm = new SplitMix64(0n);
  if (sm.nextU64() !== REFERENCE.splitmixZeroFirst) {
    return false;
  }
  return l2Normalize(rawComponents(0, "x", 4)).length === 4;
}
