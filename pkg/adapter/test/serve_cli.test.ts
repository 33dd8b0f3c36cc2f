/** End-to-end tests of the built CLI (dist/main.js) over real pipes: these
 * exercise exactly what the explanation engine spawns. Run `npm run build`
 * first; the suite fails fast with a clear message if dist is missing. */

import { type ChildProcess, spawn } from "node:child_process";
import { existsSync } from "node:fs";
import { join } from "node:path";
import * as readline from "node:readline";
import { fileURLToPath } from "node:url";
import { afterEach, beforeAll, describe, expect, it } from "vitest";
import { loadCsv } from "../src/csv.js";

const ROOT = fileURLToPath(new URL("..", import.meta.url));
const ENTRY = join(ROOT, "dist", "main.js");
const FIXTURES = join(ROOT, "fixtures");

class Client {
  private proc: ChildProcess;
  private lines: AsyncIterator<string>;

  constructor(args: string[]) {
    this.proc = spawn("node", [ENTRY, ...args], {
      stdio: ["pipe", "pipe", "inherit"],
    });
    this.lines = readline
      .createInterface({ input: this.proc.stdout! })
      [Symbol.asyncIterator]();
  }

  send(raw: string): void {
    this.proc.stdin!.write(raw + "\n");
  }

  async recv(): Promise<Record<string, unknown>> {
    const { value, done } = await this.lines.next();
    if (done) throw new Error("adapter closed stdout");
    return JSON.parse(value as string) as Record<string, unknown>;
  }

  async ask(obj: unknown): Promise<Record<string, unknown>> {
    this.send(JSON.stringify(obj));
    return this.recv();
  }

  async close(): Promise<number | null> {
    this.send('{"op":"bye"}');
    this.proc.stdin!.end();
    return new Promise((resolve) => this.proc.on("exit", resolve));
  }

  kill(): void {
    if (this.proc.exitCode === null) this.proc.kill("SIGKILL");
  }
}

let clients: Client[] = [];

function client(args: string[]): Client {
  const c = new Client(args);
  clients.push(c);
  return c;
}

afterEach(() => {
  for (const c of clients) c.kill();
  clients = [];
});

beforeAll(() => {
  if (!existsSync(ENTRY)) {
    throw new Error("dist/main.js missing - run `npm run build` before testing");
  }
});

describe("echo command", () => {
  it("handshakes, predicts, and exits cleanly on bye", async () => {
    const c = client(["echo", "--d", "3"]);
    expect(await c.ask({ op: "hello" })).toEqual({
      op: "hello",
      d: 3,
      name: "echo",
    });
    expect(await c.ask({ id: 0, x: [3.5, 1, 2] })).toEqual({ id: 0, y: 3.5 });
    expect(await c.close()).toBe(0);
  });

  it("survives garbage lines between valid requests", async () => {
    const c = client(["echo", "--d", "2"]);
    await c.ask({ op: "hello" });
    c.send("{definitely not json");
    expect(await c.recv()).toHaveProperty("error");
    c.send("[]");
    expect(await c.recv()).toHaveProperty("error");
    expect(await c.ask({ id: 5, x: [7.25, 0] })).toEqual({ id: 5, y: 7.25 });
    expect(await c.close()).toBe(0);
  });
});

describe("serve command", () => {
  it("trains the tree ensemble and reproduces training rows", async () => {
    const dataset = join(FIXTURES, "surface.csv");
    const table = loadCsv(dataset, "y");
    const c = client([
      "serve",
      "--dataset", dataset,
      "--target-column", "y",
      "--task", "regression",
      "--model-kind", "extra-trees",
      "--train-fraction", "1.0",
      "--seed", "0",
    ]);
    const hello = await c.ask({ op: "hello" });
    expect(hello).toMatchObject({ op: "hello", d: 4, name: "extra-trees:surface.csv" });
    for (const i of [0, 57, 199]) {
      const reply = await c.ask({ id: i, x: table.rows[i] });
      expect(reply.id).toBe(i);
      expect(Math.abs((reply.y as number) - (table.rawTargets[i] as number)))
        .toBeLessThan(1e-9);
    }
    expect(await c.close()).toBe(0);
  });

  it("serves classification probabilities in [0, 1]", async () => {
    const c = client([
      "serve",
      "--dataset", join(FIXTURES, "rings.csv"),
      "--target-column", "ring",
      "--task", "classification-probability",
      "--model-kind", "kernel-logistic",
      "--seed", "0",
    ]);
    const hello = await c.ask({ op: "hello" });
    expect(hello).toMatchObject({ d: 2 });
    const center = await c.ask({ id: 0, x: [0.1, -0.2] });
    const far = await c.ask({ id: 1, x: [1.8, 0.0] });
    for (const r of [center, far]) {
      expect(r.y as number).toBeGreaterThanOrEqual(0);
      expect(r.y as number).toBeLessThanOrEqual(1);
    }
    // inner ring maps to 0, outer to 1 (lexicographic positive label)
    expect(center.y as number).toBeLessThan(0.5);
    expect(far.y as number).toBeGreaterThan(0.5);
    expect(await c.close()).toBe(0);
  });

  it("is deterministic across restarts for a fixed config", async () => {
    const args = [
      "serve",
      "--dataset", join(FIXTURES, "surface.csv"),
      "--target-column", "y",
      "--task", "regression",
      "--model-kind", "extra-trees",
      "--train-fraction", "0.8",
      "--seed", "42",
    ];
    const x = [0.3, -0.4, 0.1, 0.9];
    const ys: number[] = [];
    for (let run = 0; run < 2; run++) {
      const c = client(args);
      await c.ask({ op: "hello" });
      const reply = await c.ask({ id: 0, x });
      ys.push(reply.y as number);
      await c.close();
    }
    expect(ys[0]).toBe(ys[1]);
  });

  it("exits nonzero before the handshake on a bad dataset", async () => {
    const proc = spawn("node", [
      ENTRY, "serve",
      "--dataset", "/no/such/file.csv",
      "--target-column", "y",
      "--task", "regression",
      "--model-kind", "extra-trees",
    ], { stdio: ["pipe", "pipe", "pipe"] });
    let sawStdout = false;
    proc.stdout.on("data", () => {
      sawStdout = true;
    });
    const code: number | null = await new Promise((resolve) =>
      proc.on("exit", resolve));
    expect(code).not.toBe(0);
    expect(sawStdout).toBe(false);
  });

  it("rejects a classifier asked to do regression", async () => {
    const proc = spawn("node", [
      ENTRY, "serve",
      "--dataset", join(FIXTURES, "surface.csv"),
      "--target-column", "y",
      "--task", "regression",
      "--model-kind", "kernel-logistic",
    ], { stdio: ["pipe", "pipe", "pipe"] });
    const err: Buffer[] = [];
    proc.stderr.on("data", (c: Buffer) => err.push(c));
    const code: number | null = await new Promise((resolve) =>
      proc.on("exit", resolve));
    expect(code).not.toBe(0);
    expect(Buffer.concat(err).toString()).toContain("classification-probability");
  });
});
