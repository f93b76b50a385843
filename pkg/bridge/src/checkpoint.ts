/**
 * Stub seq2seq checkpoint: a rule table plus a deterministic fallback
 * generator. It stands in for a fine-tuned transformer so the protocol
 * and the four setups can be exercised without any training or weights.
 *
 * Prompt conventions (a bridge-side choice, mirrored by the fallback):
 *   "predict <task>: <input> options: a, b, c"        -> "label: X"
 *   "explain <task>: <input> options: a, b, c"        -> "label: X explanation: E"
 *   "explain <task>: <input> label: X"                -> "explanation: E"
 *   "justify <task>: <input> [label: X]"              -> "E"
 */

import * as fs from 'fs';

export interface CheckpointRule {
  /** Rule fires when this substring occurs in the prompt. */
  contains: string;
  output: string;
}

export interface Checkpoint {
  name: string;
  rules: CheckpointRule[];
}

export function loadCheckpoint(path: string): Checkpoint {
  const obj = JSON.parse(fs.readFileSync(path, 'utf-8'));
  if (typeof obj.name !== 'string' || !Array.isArray(obj.rules)) {
    throw new Error(`${path}: checkpoint needs a name and a rules array`);
  }
  for (const rule of obj.rules) {
    if (typeof rule.contains !== 'string' || typeof rule.output !== 'string') {
      throw new Error(`${path}: each rule needs string contains/output`);
    }
  }
  return { name: obj.name, rules: obj.rules };
}

/** FNV-1a 32-bit hash; the only source of variety in the stub. */
export function hashString(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

function optionsFromPrompt(prompt: string): string[] {
  const at = prompt.lastIndexOf('options:');
  if (at < 0) {
    return [];
  }
  return prompt
    .slice(at + 'options:'.length)
    .split(',')
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
}

function pickLabel(prompt: string, options: string[]): string {
  if (options.length === 0) {
    throw new Error('prompt lists no options to pick a label from');
  }
  return options[hashString(prompt) % options.length];
}

/** Two salient (longest) words of the input part of the prompt. */
function salientWords(prompt: string): [string, string] {
  const body = prompt.split('options:')[0];
  const words = body
    .replace(/^(predict|explain|justify)\s+\w+:/, '')
    .split(/\s+/)
    .map((w) => w.replace(/^[^0-9A-Za-z]+|[^0-9A-Za-z]+$/g, '').toLowerCase())
    .filter((w) => w.length > 0);
  if (words.length === 0) {
    return ['input', 'text'];
  }
  const ranked = [...words].sort((a, b) => b.length - a.length || (a < b ? -1 : 1));
  return [ranked[0], ranked[Math.min(1, ranked.length - 1)]];
}

function blurb(prompt: string): string {
  const [first, second] = salientWords(prompt);
  const conditioned = /label:\s*(\S[^]*)$/.exec(prompt.split('options:')[0]);
  if (conditioned) {
    return `the words ${first} and ${second} point to ${conditioned[1].trim()}.`;
  }
  return `the words ${first} and ${second} decide the outcome.`;
}

/**
 * Greedy "decoding": a pure function of the prompt, so repeated calls are
 * byte-identical. Rules are checked first so fixtures can pin exact outputs.
 */
export function generateText(ckpt: Checkpoint, prompt: string): string {
  for (const rule of ckpt.rules) {
    if (prompt.includes(rule.contains)) {
      return rule.output;
    }
  }
  if (prompt.startsWith('predict ')) {
    return `label: ${pickLabel(prompt, optionsFromPrompt(prompt))}`;
  }
  if (prompt.startsWith('explain ')) {
    if (/label:\s*\S/.test(prompt.split('options:')[0])) {
      return `explanation: ${blurb(prompt)}`;
    }
    return `label: ${pickLabel(prompt, optionsFromPrompt(prompt))} explanation: ${blurb(prompt)}`;
  }
  return blurb(prompt);
}

/**
 * Stub predictor score for (input, label): strictly positive and stable.
 * Setups normalize these into a distribution over the label set.
 */
export function rawScore(input: string, label: string): number {
  return 1 + (hashString(`${input}|${label}`) % 997);
}
