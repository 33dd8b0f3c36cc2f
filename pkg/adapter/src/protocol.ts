/** JSON-lines stdio protocol: one request object per line, one response line
 * back, strictly serial and in request order.
 *
 * Requests:  {"op":"hello"}              -> {"op":"hello","d":<int>,"name":<str>}
 *            {"id":<int>,"x":[<num>,..]} -> {"id":<int>,"y":<num>}  (or {"id","error"})
 *            {"op":"bye"}                -> loop ends (EOF does the same)
 *
 * A malformed line is answered with an error object and the loop continues;
 * nothing a client writes can kill the process once serving has started.
 */

import * as readline from "node:readline";
import type { Readable, Writable } from "node:stream";

export interface PredictModel {
  readonly d: number;
  readonly name: string;
  predict(x: number[]): number;
}

export interface ServeOptions {
  input?: Readable;
  output?: Writable;
}

function isPlainObject(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

export async function serveModel(
  model: PredictModel,
  opts: ServeOptions = {},
): Promise<void> {
  const input = opts.input ?? process.stdin;
  const output = opts.output ?? process.stdout;
  const emit = (obj: unknown): void => {
    // One write per response keeps the line atomic on the pipe.
    output.write(JSON.stringify(obj) + "\n");
  };

  const lines = readline.createInterface({ input, crlfDelay: Infinity });
  for await (const line of lines) {
    const raw = line.trim();
    if (raw === "") continue;

    let msg: unknown;
    try {
      msg = JSON.parse(raw);
    } catch {
      emit({ id: -1, error: "unparseable request line" });
      continue;
    }
    if (!isPlainObject(msg)) {
      emit({ id: -1, error: "request must be a JSON object" });
      continue;
    }

    if (msg.op === "hello") {
      emit({ op: "hello", d: model.d, name: model.name });
      continue;
    }
    if (msg.op === "bye") {
      lines.close();
      return;
    }

    // Anything else is a prediction attempt: {"id": int, "x": [numbers]}.
    const id = typeof msg.id === "number" && Number.isInteger(msg.id) ? msg.id : null;
    if (id === null) {
      emit({ id: -1, error: "predict request needs an integer id" });
      continue;
    }
    const x = msg.x;
    if (
      !Array.isArray(x) ||
      x.length !== model.d ||
      !x.every((v) => typeof v === "number" && Number.isFinite(v))
    ) {
      emit({ id, error: `x must be an array of ${model.d} finite numbers` });
      continue;
    }
    let y: number;
    try {
      y = model.predict(x as number[]);
    } catch (err) {
      emit({ id, error: `prediction failed: ${err instanceof Error ? err.message : String(err)}` });
      continue;
    }
    if (!Number.isFinite(y)) {
      emit({ id, error: "model produced a non-finite value" });
      continue;
    }
    emit({ id, y });
  }
}
