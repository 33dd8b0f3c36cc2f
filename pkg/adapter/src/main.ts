/** CLI entry: `echo` serves the identity test model, `serve` trains a model
 * on a CSV and answers predictions; both speak the JSON-lines protocol on
 * stdio. Setup failures exit nonzero before the handshake; stdout carries
 * only protocol lines. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { echoModel } from "./echo.js";
import { serveModel, type PredictModel } from "./protocol.js";
import { buildModel, type ModelKind, type Task } from "./serve.js";

function fail(message: string): never {
  process.stderr.write(`error: ${message}\n`);
  process.exit(1);
}

await yargs(hideBin(process.argv))
  .scriptName("model-adapter")
  .command(
    "echo",
    "serve the identity test model (y = x[0])",
    (y) =>
      y.option("d", {
        type: "number",
        default: 1,
        describe: "input dimension",
      }),
    async (argv) => {
      let model: PredictModel;
      try {
        model = echoModel(argv.d);
      } catch (err) {
        fail(err instanceof Error ? err.message : String(err));
      }
      await serveModel(model);
      process.exit(0);
    },
  )
  .command(
    "serve",
    "train a model on a CSV and serve predictions",
    (y) =>
      y
        .option("dataset", {
          type: "string",
          demandOption: true,
          describe: "CSV file with one header row",
        })
        .option("target-column", {
          type: "string",
          demandOption: true,
          describe: "column holding the training target",
        })
        .option("task", {
          choices: ["regression", "classification-probability"] as const,
          demandOption: true,
          describe: "output semantics of predictions",
        })
        .option("model-kind", {
          choices: ["extra-trees", "kernel-logistic"] as const,
          demandOption: true,
          describe: "model family to train",
        })
        .option("train-fraction", {
          type: "number",
          default: 0.8,
          describe: "fraction of rows used for training",
        })
        .option("seed", {
          type: "number",
          default: 0,
          describe: "shuffle/training seed",
        }),
    async (argv) => {
      let model: PredictModel;
      try {
        model = buildModel({
          dataset: argv.dataset,
          targetColumn: argv["target-column"] as string,
          task: argv.task as Task,
          modelKind: argv["model-kind"] as ModelKind,
          trainFraction: argv["train-fraction"] as number,
          seed: argv.seed,
        });
      } catch (err) {
        fail(err instanceof Error ? err.message : String(err));
      }
      await serveModel(model);
      process.exit(0);
    },
  )
  .demandCommand(1, "choose a command: echo or serve")
  .strict()
  .help()
  .parse();
