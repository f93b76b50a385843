/**
 * Wire contract shared with the harness: one JSON object per line.
 *
 * request:  {"id", "op": "infer"|"predict"|"handshake"|"stats",
 *            "instance", "condition_label"}
 * response: {"id", "label", "nle", "scores", "error"}
 *           plus "capabilities" for handshake and "stats" for stats replies.
 */

export type Setup = 'MT-Re' | 'MT-Ra' | 'ST-Re' | 'ST-Ra';

export const SETUPS: Setup[] = ['MT-Re', 'MT-Ra', 'ST-Re', 'ST-Ra'];

export interface WireInstance {
  id: string;
  task: string;
  fields: Record<string, string>;
  label_set: string[];
  gold_label: string | null;
  gold_nle: string | null;
}

export interface WireRequest {
  id: string | null;
  op: string;
  instance?: WireInstance | null;
  condition_label?: string | null;
}

export interface WireResponse {
  id: string | null;
  label: string | null;
  nle: string | null;
  scores: Record<string, number> | null;
  error: string | null;
  capabilities?: Capabilities;
  stats?: BridgeStats;
}

export interface Capabilities {
  name: string;
  setup: Setup;
  supports_scores: boolean;
  deterministic: boolean;
}

export interface BridgeStats {
  infer_calls: number;
  generation_calls: number;
}

export class BridgeError extends Error {}

/** Validate the instance payload enough to fail loudly on malformed input. */
export function checkInstance(instance: WireInstance | null | undefined): WireInstance {
  if (!instance || typeof instance !== 'object') {
    throw new BridgeError('request lacks an instance');
  }
  if (typeof instance.id !== 'string' || !instance.id) {
    throw new BridgeError('instance lacks an id');
  }
  if (!instance.fields || typeof instance.fields !== 'object') {
    throw new BridgeError(`instance ${instance.id} lacks fields`);
  }
  if (!Array.isArray(instance.label_set) || instance.label_set.length < 2) {
    throw new BridgeError(`instance ${instance.id} needs a label set of 2+ labels`);
  }
  return instance;
}
