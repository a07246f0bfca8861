#!/usr/bin/env node
/**
 * CLI entry point: run the protocol loop over stdin/stdout until EOF.
 *
 * Flags:
 *   --phi <value>   AR(1) persistence, |phi| < 1 (default 0.5)
 *   --sd <value>    innovation standard deviation, > 0 (default 1.0)
 *
 * The engine's sweep flags `-experimentMV <id>` and `-numMCexpMV <index>`
 * are accepted and ignored (logged to stderr) so launch lines built for
 * a real sweep work unchanged.
 */

import { createInterface } from "node:readline";
import process from "node:process";
import { fileURLToPath } from "node:url";
import { RefSim, RefSimOptions } from "./refsim.js";

export function parseArgs(argv: string[]): Partial<RefSimOptions> {
  const options: Partial<RefSimOptions> = {};
  for (let i = 0; i < argv.length; i += 1) {
    const flag = argv[i];
    if (flag === "--phi" || flag === "--sd") {
      const raw = argv[i + 1];
      const value = Number(raw);
      if (raw === undefined || Number.isNaN(value)) {
        throw new Error(`${flag} needs a numeric value`);
      }
      options[flag === "--phi" ? "phi" : "sd"] = value;
      i += 1;
    } else if (flag === "-experimentMV" || flag === "-numMCexpMV") {
      process.stderr.write(`refsim: ignoring sweep flag ${flag} ${argv[i + 1] ?? ""}\n`);
      i += 1;
    } else {
      throw new Error(`unknown flag ${flag}`);
    }
  }
  return options;
}

export function main(): void {
  let sim: RefSim;
  try {
    sim = new RefSim(parseArgs(process.argv.slice(2)));
  } catch (error) {
    process.stderr.write(`refsim: ${(error as Error).message}\n`);
    process.exit(1);
  }

  const rl = createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    const response = sim.handleLine(line);
    if (response !== null) {
      process.stdout.write(`${response}\n`);
    }
  });
  rl.on("close", () => {
    process.exit(0);
  });
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  fileURLToPath(import.meta.url) === process.argv[1];
if (invokedDirectly) {
  main();
}
