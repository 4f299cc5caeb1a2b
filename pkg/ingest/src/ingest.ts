// Ingest job: walk the source frames with a stride, remap detector landmarks
// into the model's landmark order, and emit the reshape pipeline's exact
// input formats (PNG frames, landmark JSONL, .flo flow files, manifest).
import fs from 'fs/promises';
import path from 'path';

import { FlowBackend, LandmarkBackend } from './backends.js';
import { encodeFlo, floFilename } from './flo.js';
import { LandmarkFrame, applyRemap, encodeJsonl, validateRemap } from './landmarks.js';
import { FrameSource, encodePng } from './video.js';

export interface IngestJob {
    source: FrameSource;
    outDir: string;
    stride: number;
    remap: number[];        // detector index -> model landmark slot
    modelLandmarks: number; // NL of the target face model
    landmarkBackend: LandmarkBackend;
    flowBackend: FlowBackend;
}

export interface IngestResult {
    frames: number;
    flows: number;
    width: number;
    height: number;
    nullFrames: number[];
    manifestPath: string;
}

function frameFilename(index: number): string {
    return `frame_${String(index).padStart(6, '0')}.png`;
}

export async function ingest(job: IngestJob): Promise<IngestResult> {
    if (job.stride < 1) {
        throw new Error(`stride must be >= 1, got ${job.stride}`);
    }
    validateRemap(job.remap, job.modelLandmarks);

    const total = await job.source.frameCount();
    const picked: number[] = [];
    for (let i = 0; i < total; i += job.stride) picked.push(i);

    const framesDir = path.join(job.outDir, 'frames');
    const flowDir = path.join(job.outDir, 'flow');
    await fs.mkdir(framesDir, { recursive: true });
    await fs.mkdir(flowDir, { recursive: true });

    let width = 0;
    let height = 0;
    const landmarkFrames: LandmarkFrame[] = [];
    const nullFrames: number[] = [];

    for (let k = 0; k < picked.length; k++) {
        const src = picked[k];
        const frame = await job.source.readFrame(src);
        if (k === 0) {
            width = frame.width;
            height = frame.height;
        } else if (frame.width !== width || frame.height !== height) {
            throw new Error(`frame ${src} is ${frame.width}x${frame.height}, expected ${width}x${height}`);
        }
        await fs.writeFile(path.join(framesDir, frameFilename(k)), encodePng(frame));

        const detected = await job.landmarkBackend.detect(src);
        const points = applyRemap(detected, job.remap, job.modelLandmarks);
        if (points === null) nullFrames.push(k);
        landmarkFrames.push({ frame: k, points });

        if (k > 0) {
            const flow = await job.flowBackend.flow(picked[k - 1], src, width, height);
            if (flow.width !== width || flow.height !== height) {
                throw new Error(`flow for frame ${k} is ${flow.width}x${flow.height}, expected ${width}x${height}`);
            }
            await fs.writeFile(path.join(flowDir, floFilename(k)), encodeFlo(flow));
        }
    }

    const landmarksPath = path.join(job.outDir, 'landmarks.jsonl');
    await fs.writeFile(landmarksPath, encodeJsonl(landmarkFrames));

    const manifestPath = path.join(job.outDir, 'manifest.json');
    const manifest = {
        frames: picked.length,
        flows: Math.max(picked.length - 1, 0),
        width,
        height,
        stride: job.stride,
        landmarks: job.modelLandmarks,
        null_frames: nullFrames,
    };
    await fs.writeFile(manifestPath, JSON.stringify(manifest, null, 2) + '\n');
    return {
        frames: picked.length,
        flows: Math.max(picked.length - 1, 0),
        width,
        height,
        nullFrames,
        manifestPath,
    };
}
