/**
 * The four prediction/explanation setups.
 *
 * MT-Re: one joint generation, parsed as "label: L explanation: E".
 * MT-Ra: predict first, then generate the explanation conditioned on it.
 * ST-Re: generate the explanation, then score labels given (input, NLE).
 * ST-Ra: generate one explanation per candidate label, score each pair,
 *        and return the argmax label with its explanation.
 */

import { Checkpoint, generateText, rawScore } from './checkpoint';
import { BridgeError, Setup, WireInstance } from './protocol';

export interface SetupResult {
  label: string;
  nle: string;
  scores: Record<string, number>;
}

export interface GenerationCounter {
  count: number;
}

function inputText(instance: WireInstance): string {
  const keys = Object.keys(instance.fields).sort();
  return keys.map((k) => `${k}: ${instance.fields[k]}`).join(' ');
}

function optionsText(instance: WireInstance): string {
  return `options: ${instance.label_set.join(', ')}`;
}

/** Exact, case-insensitive membership; anything else is a model fault. */
export function resolveLabel(raw: string, labelSet: string[]): string {
  const want = raw.trim().toLowerCase();
  for (const label of labelSet) {
    if (label.toLowerCase() === want) {
      return label;
    }
  }
  throw new BridgeError(`generated label ${JSON.stringify(raw)} is not in the label set`);
}

export function parseMtOutput(text: string): { label: string; nle: string } {
  const m = /^\s*label:\s*(.+?)\s+explanation:\s*(\S[^]*)$/.exec(text);
  if (!m) {
    throw new BridgeError(
      `cannot parse joint output ${JSON.stringify(text)}: expected "label: L explanation: E"`
    );
  }
  return { label: m[1].trim(), nle: m[2].trim() };
}

function oneHot(labelSet: string[], label: string): Record<string, number> {
  const scores: Record<string, number> = {};
  for (const candidate of labelSet) {
    scores[candidate] = candidate === label ? 1.0 : 0.0;
  }
  return scores;
}

function normalizedScores(input: string, labelSet: string[]): Record<string, number> {
  const raw = labelSet.map((label) => rawScore(input, label));
  const total = raw.reduce((a, b) => a + b, 0);
  const scores: Record<string, number> = {};
  labelSet.forEach((label, i) => {
    scores[label] = raw[i] / total;
  });
  return scores;
}

function argmax(scores: Record<string, number>, labelSet: string[]): string {
  let best = labelSet[0];
  for (const label of labelSet) {
    if (scores[label] > scores[best]) {
      best = label;
    }
  }
  return best;
}

function generate(ckpt: Checkpoint, prompt: string, counter: GenerationCounter): string {
  counter.count += 1;
  return generateText(ckpt, prompt);
}

export function runSetup(
  setup: Setup,
  ckpt: Checkpoint,
  instance: WireInstance,
  counter: GenerationCounter,
  conditionLabel: string | null = null
): SetupResult {
  const task = instance.task;
  const input = inputText(instance);
  const options = optionsText(instance);

  if (setup === 'MT-Re') {
    const out = parseMtOutput(generate(ckpt, `explain ${task}: ${input} ${options}`, counter));
    const label = resolveLabel(out.label, instance.label_set);
    return { label, nle: out.nle, scores: oneHot(instance.label_set, label) };
  }

  if (setup === 'MT-Ra') {
    let label: string;
    if (conditionLabel !== null) {
      label = resolveLabel(conditionLabel, instance.label_set);
    } else {
      const predicted = generate(ckpt, `predict ${task}: ${input} ${options}`, counter);
      const m = /^\s*label:\s*(\S[^]*)$/.exec(predicted);
      if (!m) {
        throw new BridgeError(`cannot parse predicted label from ${JSON.stringify(predicted)}`);
      }
      label = resolveLabel(m[1], instance.label_set);
    }
    const explained = generate(ckpt, `explain ${task}: ${input} label: ${label}`, counter);
    const m = /^\s*explanation:\s*(\S[^]*)$/.exec(explained);
    if (!m) {
      throw new BridgeError(`cannot parse explanation from ${JSON.stringify(explained)}`);
    }
    return { label, nle: m[1].trim(), scores: oneHot(instance.label_set, label) };
  }

  if (setup === 'ST-Re') {
    const nle = generate(ckpt, `justify ${task}: ${input}`, counter).trim();
    if (!nle) {
      throw new BridgeError('empty explanation generated');
    }
    const scores = normalizedScores(`${input} ${nle}`, instance.label_set);
    return { label: argmax(scores, instance.label_set), nle, scores };
  }

  // ST-Ra: one explanation per candidate label, keep the best-scoring pair
  const drafts: Record<string, string> = {};
  for (const label of instance.label_set) {
    drafts[label] = generate(ckpt, `justify ${task}: ${input} label: ${label}`, counter).trim();
    if (!drafts[label]) {
      throw new BridgeError(`empty explanation generated for label ${label}`);
    }
  }
  const raw = instance.label_set.map((label) => rawScore(`${input} ${drafts[label]}`, label));
  const total = raw.reduce((a, b) => a + b, 0);
  const scores: Record<string, number> = {};
  instance.label_set.forEach((label, i) => {
    scores[label] = raw[i] / total;
  });
  if (conditionLabel !== null) {
    const label = resolveLabel(conditionLabel, instance.label_set);
    return { label, nle: drafts[label], scores: oneHot(instance.label_set, label) };
  }
  const label = argmax(scores, instance.label_set);
  return { label, nle: drafts[label], scores };
}
