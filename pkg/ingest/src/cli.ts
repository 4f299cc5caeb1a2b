#!/usr/bin/env node
// ingest <video> --out dir [--stride k] [--remap table.json]
//   [--detections file.jsonl] [--flow-dir dir] [--model-landmarks N]
import fs from 'fs/promises';

import { NullLandmarks, PrecomputedFlow, PrecomputedLandmarks, ZeroFlow } from './backends.js';
import { ingest } from './ingest.js';
import { openFrameSource } from './video.js';

function parseArgs(argv: string[]) {
    const opts: Record<string, string> = {};
    const positional: string[] = [];
    for (let i = 0; i < argv.length; i++) {
        const a = argv[i];
        if (a.startsWith('--')) {
            opts[a.slice(2)] = argv[++i];
        } else {
            positional.push(a);
        }
    }
    return { opts, positional };
}

async function main(): Promise<number> {
    const { opts, positional } = parseArgs(process.argv.slice(2));
    if (positional.length !== 1 || !opts['out']) {
        console.error('usage: ingest <video-or-frame-dir> --out DIR [--stride K] ' +
            '[--remap table.json] [--detections detector.jsonl] [--flow-dir DIR] ' +
            '[--model-landmarks N]');
        return 2;
    }
    const stride = opts['stride'] ? parseInt(opts['stride'], 10) : 1;
    const modelLandmarks = opts['model-landmarks'] ? parseInt(opts['model-landmarks'], 10) : 68;

    let remap: number[];
    if (opts['remap']) {
        remap = JSON.parse(await fs.readFile(opts['remap'], 'utf-8'));
    } else {
        remap = Array.from({ length: modelLandmarks }, (_, i) => i);
    }
    const landmarkBackend = opts['detections']
        ? new PrecomputedLandmarks(opts['detections'])
        : new NullLandmarks();
    const flowBackend = opts['flow-dir'] ? new PrecomputedFlow(opts['flow-dir']) : new ZeroFlow();

    try {
        const source = await openFrameSource(positional[0]);
        const result = await ingest({
            source,
            outDir: opts['out'],
            stride,
            remap,
            modelLandmarks,
            landmarkBackend,
            flowBackend,
        });
        console.log(`wrote ${result.frames} frames, ${result.flows} flow fields ` +
            `(${result.width}x${result.height}) to ${opts['out']}`);
        if (result.nullFrames.length) {
            console.warn(`frames with no detected face: ${result.nullFrames.join(', ')}`);
        }
        return 0;
    } catch (err) {
        console.error(`ingest failed: ${(err as Error).message}`);
        return 1;
    }
}

main().then(code => process.exit(code));
