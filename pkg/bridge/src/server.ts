/**
 * Line-based JSON server over stdin/stdout. One request per line, one
 * response per line; errors go into the response, never onto stderr, so a
 * single bad request cannot take the bridge down.
 */

import * as readline from 'readline';

import { Checkpoint } from './checkpoint';
import {
  BridgeError,
  BridgeStats,
  Capabilities,
  Setup,
  WireRequest,
  WireResponse,
  checkInstance,
} from './protocol';
import { GenerationCounter, runSetup } from './setups';

export class BridgeServer {
  private readonly ckpt: Checkpoint;
  private readonly setup: Setup;
  private inferCalls = 0;
  private readonly counter: GenerationCounter = { count: 0 };

  constructor(ckpt: Checkpoint, setup: Setup) {
    this.ckpt = ckpt;
    this.setup = setup;
  }

  capabilities(): Capabilities {
    return {
      name: this.ckpt.name,
      setup: this.setup,
      supports_scores: true,
      deterministic: true,
    };
  }

  stats(): BridgeStats {
    return { infer_calls: this.inferCalls, generation_calls: this.counter.count };
  }

  handleLine(raw: string): WireResponse {
    let id: string | null = null;
    try {
      const request = JSON.parse(raw) as WireRequest;
      id = request.id ?? null;
      const op = request.op;
      if (op === 'handshake') {
        return { id, label: null, nle: null, scores: null, error: null, capabilities: this.capabilities() };
      }
      if (op === 'stats') {
        return { id, label: null, nle: null, scores: null, error: null, stats: this.stats() };
      }
      if (op !== 'infer' && op !== 'predict') {
        return this.fail(id, `unsupported op ${JSON.stringify(op)}`);
      }
      const instance = checkInstance(request.instance);
      if (op === 'infer') {
        this.inferCalls += 1;
      }
      const result = runSetup(
        this.setup,
        this.ckpt,
        instance,
        this.counter,
        request.condition_label ?? null
      );
      return {
        id,
        label: result.label,
        nle: op === 'infer' ? result.nle : null,
        scores: result.scores,
        error: null,
      };
    } catch (exc) {
      if (exc instanceof BridgeError || exc instanceof SyntaxError || exc instanceof Error) {
        return this.fail(id, `bad request: ${exc.message}`);
      }
      return this.fail(id, 'bad request: unknown failure');
    }
  }

  private fail(id: string | null, message: string): WireResponse {
    return { id, label: null, nle: null, scores: null, error: message };
  }

  serveStdio(): void {
    const rl = readline.createInterface({ input: process.stdin, terminal: false });
    rl.on('line', (line) => {
      const trimmed = line.trim();
      if (!trimmed) {
        return;
      }
      process.stdout.write(JSON.stringify(this.handleLine(trimmed)) + '\n');
    });
  }
}
