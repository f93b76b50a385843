/**
 * Entry point: `node dist/main.js --checkpoint <path> --setup <setup>`
 * serves the wire protocol on stdin/stdout until stdin closes.
 */

import { loadCheckpoint } from './checkpoint';
import { SETUPS, Setup } from './protocol';
import { BridgeServer } from './server';

function usage(message: string): never {
  process.stderr.write(
    `error: ${message}\n` +
      `usage: main.js --checkpoint <stub.json> --setup <${SETUPS.join('|')}>\n`
  );
  process.exit(1);
}

function parseArgs(argv: string[]): { checkpoint: string; setup: Setup } {
  let checkpoint: string | null = null;
  let setup: string | null = null;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === '--checkpoint') {
      checkpoint = argv[++i];
    } else if (argv[i] === '--setup') {
      setup = argv[++i];
    } else {
      usage(`unknown argument ${argv[i]}`);
    }
  }
  if (!checkpoint) {
    usage('--checkpoint is required');
  }
  if (!setup || !SETUPS.includes(setup as Setup)) {
    usage(`--setup must be one of ${SETUPS.join(', ')}`);
  }
  return { checkpoint: checkpoint!, setup: setup as Setup };
}

function main(): void {
  const args = parseArgs(process.argv.slice(2));
  const server = new BridgeServer(loadCheckpoint(args.checkpoint), args.setup);
  server.serveStdio();
}

main();
