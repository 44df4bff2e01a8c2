/**
 * Deterministic vector primitives shared with the core pipeline.
 *
 * Spec: h = FNV-1a-64(utf8(`${seed}|${key}`)); SplitMix64 seeded with h;
 * each component is ((next() >> 11) * 2^-53) * 2 - 1 drawn in index order.
 * anchor() normalizes; rawComponents() does not.  All arithmetic is plain
 * IEEE-754 double in a fixed order so the Python implementation reproduces
 * every bit.
 */

const MASK64 = (1n << 64n) - 1n;
const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const SM_GAMMA = 0x9e3779b97f4a7c15n;
const SM_MIX1 = 0xbf58476d1ce4e5b9n;
const SM_MIX2 = 0x94d049bb133111ebn;
const TO_UNIT = 2 ** -53;

const utf8 = new TextEncoder();

export function fnv1a64(data: Uint8Array): bigint {
  let h = FNV_OFFSET;
  for (const b of data) {
    h ^= BigInt(b);
    h = (h * FNV_PRIME) & MASK64;
  }
  return h;
}

export class SplitMix64 {
  state: bigint;

  constructor(state: bigint) {
    this.state = state & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + SM_GAMMA) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * SM_MIX1) & MASK64;
    z = ((z ^ (z >> 27n)) * SM_MIX2) & MASK64;
    return (z ^ (z >> 31n)) & MASK64;
  }

  nextUnit(): number {
    return Number(this.nextU64() >> 11n) * TO_UNIT * 2 - 1;
  }
}

/** Squared-norm accumulation is left to right, matching the core. */
export function l2Normalize(v: Float64Array): Float64Array {
  let s = 0;
  for (let i = 0; i < v.length; i++) {
    s += v[i] * v[i];
  }
  const n = Math.sqrt(s);
  const out = new Float64Array(v.length);
  if (n === 0) {
    out.set(v);
    return out;
  }
  for (let i = 0; i < v.length; i++) {
    out[i] = v[i] / n;
  }
  return out;
}

export function rawComponents(seed: number, key: string, dim: number): Float64Array {
  const sm = new SplitMix64(fnv1a64(utf8.encode(`${seed}|${key}`)));
  const out = new Float64Array(dim);
  for (let i = 0; i < dim; i++) {
    out[i] = sm.nextUnit();
  }
  return out;
}

export function anchor(seed: number, key: string, dim: number): Float64Array {
  return l2Normalize(rawComponents(seed, key, dim));
}
