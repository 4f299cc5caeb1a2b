// Detector and flow backends are pluggable; the adapter's contract is only
// the output file formats. The built-in backends read precomputed detections
// or flow files (any external tool can produce them) or emit null/zero data.
import fs from 'fs/promises';
import path from 'path';

import { FlowField, decodeFlo, floFilename, zeroFlow } from './flo.js';
import { Points, decodeJsonl } from './landmarks.js';

export interface LandmarkBackend {
    /** Detector-convention points for one source frame, or null (no face). */
    detect(sourceFrame: number): Promise<Points>;
}

export interface FlowBackend {
    /** Dense flow for the transition between two emitted source frames. */
    flow(sourceFrom: number, sourceTo: number, width: number, height: number): Promise<FlowField>;
}

/** Reads detector output from a JSONL file keyed by source frame index. */
export class PrecomputedLandmarks implements LandmarkBackend {
    private frames: Map<number, Points> | null = null;

    constructor(private readonly jsonlPath: string) {}

    async detect(sourceFrame: number): Promise<Points> {
        if (this.frames === null) {
            const text = await fs.readFile(this.jsonlPath, 'utf-8');
            this.frames = decodeJsonl(text);
        }
        const pts = this.frames.get(sourceFrame);
        return pts === undefined ? null : pts;
    }
}

/** Every frame counts as undetected. */
export class NullLandmarks implements LandmarkBackend {
    async detect(): Promise<Points> {
        return null;
    }
}

/** Reads .flo files named by the destination source-frame index. */
export class PrecomputedFlow implements FlowBackend {
    constructor(private readonly dir: string) {}

    async flow(_from: number, to: number): Promise<FlowField> {
        const buf = await fs.readFile(path.join(this.dir, floFilename(to)));
        return decodeFlo(buf);
    }
}

/** All-zero motion (static-scene stand-in). */
export class ZeroFlow implements FlowBackend {
    async flow(_from: number, _to: number, width: number, height: number): Promise<FlowField> {
        return zeroFlow(width, height);
    }
}
