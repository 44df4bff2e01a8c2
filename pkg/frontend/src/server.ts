/**
 * HTTP embedding service.
 *
 * Endpoints (all vectors are rows of plain JSON numbers):
 *   POST /v1/embed/text   {"inputs": [string, ...]}
 *   POST /v1/embed/image  {"image_id": string, "rect": [x0,y0,x1,y1], "hflip": bool}
 *   POST /v1/embed/points {"points": [[x,y,z], ...]}
 *   GET  /v1/health
 *
 * Success: 200 {"dim": D, "vectors": [[...], ...]}.  Malformed requests get
 * 400 and backend overload 503, both as {"error": string, "retryable": bool}.
 */

import express from "express";
import type { Express, Request, Response } from "express";
import { z } from "zod";

import { Backend, ByteHashBackend, MockBackend } from "./backends.js";
import { Rect } from "./semantics.js";

export interface ServerConfig {
  backend: "mock" | "bytehash";
  seed: number;
  dim: number;
  noise: number;
  imageRoot: string;
  maxBatch: number;
  maxInFlight: number;
}

export const DEFAULT_CONFIG: ServerConfig = {
  backend: "mock",
  seed: 0,
  dim: 256,
  noise: 0,
  imageRoot: ".",
  maxBatch: 1024,
  maxInFlight: 256,
};

const rectSchema = z.tuple([z.number(), z.number(), z.number(), z.number()]);
const textRequest = z.object({ inputs: z.array(z.string()).min(1) }).strict();
const imageRequest = z
  .object({ image_id: z.string(), rect: rectSchema, hflip: z.boolean().default(false) })
  .strict();
const pointsRequest = z
  .object({ points: z.array(z.tuple([z.number(), z.number(), z.number()])) })
  .strict();

function sendError(res: Response, status: number, message: string, retryable: boolean): void {
  res.status(status).json({ error: message, retryable });
}

function vectorsPayload(dim: number, vectors: Float64Array[]): { dim: number; vectors: number[][] } {
  return { dim, vectors: vectors.map((v) => Array.from(v)) };
}

export function makeBackend(config: ServerConfig): Backend {
  if (config.backend === "mock") {
    return new MockBackend(config.seed, config.dim, config.noise);
  }
  return new ByteHashBackend(config.imageRoot, config.seed, config.dim);
}

export function createApp(config: ServerConfig = DEFAULT_CONFIG): Express {
  const backend = makeBackend(config);
  const app = express();
  app.use(express.json({ limit: "64mb" }));
  let inFlight = 0;

  function guarded(handler: (req: Request, res: Response) => void) {
    return (req: Request, res: Response) => {
      if (inFlight >= config.maxInFlight) {
        sendError(res, 503, "backend overloaded", true);
        return;
      }
      inFlight += 1;
      try {
        handler(req, res);
      } catch (err) {
        sendError(res, 400, err instanceof Error ? err.message : String(err), false);
      } finally {
        inFlight -= 1;
      }
    };
  }

  app.get("/v1/health", (_req, res) => {
    res.json({ status: "ok", dim: config.dim, backend: backend.name });
  });

  app.post(
    "/v1/embed/text",
    guarded((req, res) => {
      const parsed = textRequest.safeParse(req.body);
      if (!parsed.success) {
        sendError(res, 400, parsed.error.message, false);
        return;
      }
      if (parsed.data.inputs.length > config.maxBatch) {
        sendError(res, 400, `batch exceeds max_batch=${config.maxBatch}`, false);
        return;
      }
      res.json(vectorsPayload(config.dim, backend.embedText(parsed.data.inputs)));
    }),
  );

  app.post(
    "/v1/embed/image",
    guarded((req, res) => {
      const parsed = imageRequest.safeParse(req.body);
      if (!parsed.success) {
        sendError(res, 400, parsed.error.message, false);
        return;
      }
      const { image_id, rect, hflip } = parsed.data;
      res.json(
        vectorsPayload(config.dim, [backend.embedImage(image_id, rect as Rect, hflip)]),
      );
    }),
  );

  app.post(
    "/v1/embed/points",
    guarded((req, res) => {
      const parsed = pointsRequest.safeParse(req.body);
      if (!parsed.success) {
        sendError(res, 400, parsed.error.message, false);
        return;
      }
      res.json(vectorsPayload(config.dim, [backend.embedPoints(parsed.data.points)]));
    }),
  );

  // Body-parser and fallthrough errors share the protocol's envelope.
  app.use((err: Error, _req: Request, res: Response, _next: express.NextFunction) => {
    sendError(res, 400, err.message, false);
  });
  return app;
}

function parseArgs(argv: string[]): { config: ServerConfig; port: number } {
  const config = { ...DEFAULT_CONFIG };
  let port = 0;
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const value = argv[i + 1];
    switch (flag) {
      case "--port":
        port = Number(value);
        i++;
        break;
      case "--backend":
        if (value !== "mock" && value !== "bytehash") {
          throw new Error(`unknown backend ${value}`);
        }
        config.backend = value;
        i++;
        break;
      case "--seed":
        config.seed = Number(value);
        i++;
        break;
      case "--dim":
        config.dim = Number(value);
        i++;
        break;
      case "--noise":
        config.noise = Number(value);
        i++;
        break;
      case "--image-root":
        config.imageRoot = String(value);
        i++;
        break;
      case "--max-batch":
        config.maxBatch = Number(value);
        i++;
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!Number.isInteger(config.dim) || config.dim <= 0) {
    throw new Error("dim must be a positive integer");
  }
  return { config, port };
}

export function main(argv: string[] = process.argv.slice(2)): void {
  const { config, port } = parseArgs(argv);
  const app = createApp(config);
  const server = app.listen(port, "127.0.0.1", () => {
    const address = server.address();
    const actual = typeof address === "object" && address !== null ? address.port : port;
    // Single startup line so launchers can parse the bound port.
    console.log(JSON.stringify({ port: actual, backend: config.backend, dim: config.dim }));
  });
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("server.js") || entry.endsWith("server.ts")) {
  main();
}
