/**
 * AR(1) reference simulator behind the line protocol.
 *
 * Requests, one per line:
 *   - `reset <uint64 seed>`: reseed and perform the first step (no reply)
 *   - `next`: advance one step (no reply)
 *   - any other token: observable request, answered `OUTPUTMV:<real>`
 *
 * `X` is the AR(1) state, `XSQ` its square; anything else answers the
 * -1 sentinel. A malformed reset seed also answers the sentinel instead
 * of crashing, so a driving campaign keeps running.
 */

import { SplitMix64 } from "./rng.js";

const UINT64_MAX = (1n << 64n) - 1n;

export interface RefSimOptions {
  phi: number;
  sd: number;
}

export const DEFAULT_OPTIONS: RefSimOptions = { phi: 0.5, sd: 1.0 };

export class RefSim {
  readonly phi: number;
  readonly sd: number;
  private rng: SplitMix64 | null = null;
  private t = 0;
  private x = 0;

  constructor(options: Partial<RefSimOptions> = {}) {
    this.phi = options.phi ?? DEFAULT_OPTIONS.phi;
    this.sd = options.sd ?? DEFAULT_OPTIONS.sd;
    if (!(Math.abs(this.phi) < 1)) {
      throw new RangeError(`phi must satisfy |phi| < 1, got ${this.phi}`);
    }
    if (!(this.sd > 0)) {
      throw new RangeError(`sd must be positive, got ${this.sd}`);
    }
  }

  /** Reseed and take the first step: the step counter reads 1 afterwards. */
  reset(seed: bigint): void {
    this.rng = new SplitMix64(seed);
    this.x = this.sd * this.rng.gaussian();
    this.t = 1;
  }

  next(): void {
    if (this.rng === null) {
      return; // `next` before any reset is ignored, like an idle machine
    }
    this.t += 1;
    this.x = this.phi * this.x + this.sd * this.rng.gaussian();
  }

  observe(name: string): number {
    switch (name) {
      case "X":
        return this.x;
      case "XSQ":
        return this.x * this.x;
      default:
        return -1;
    }
  }

  get step(): number {
    return this.t;
  }

  /**
   * Handle one request line. Returns the response line to write, or
   * null for the ack-free reset/next requests.
   */
  handleLine(line: string): string | null {
    const trimmed = line.trim();
    if (trimmed === "") {
      return null;
    }
    if (trimmed === "next") {
      this.next();
      return null;
    }
    if (trimmed.startsWith("reset")) {
      const seed = parseSeed(trimmed.slice("reset".length));
      if (seed === null) {
        return "OUTPUTMV:-1";
      }
      this.reset(seed);
      return null;
    }
    return `OUTPUTMV:${this.observe(trimmed)}`;
  }
}

function parseSeed(text: string): bigint | null {
  const token = text.trim();
  if (!/^\d+$/.test(token)) {
    return null;
  }
  const seed = BigInt(token);
  return seed <= UINT64_MAX ? seed : null;
}
