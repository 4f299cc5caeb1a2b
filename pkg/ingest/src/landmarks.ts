// Landmark JSONL: one {"frame": n, "points": [[x, y], ...] | null} per line,
// plus the detector-order -> model-order remap table.

export type Points = Array<[number, number]> | null;

export interface LandmarkFrame {
    frame: number;
    points: Points;
}

export function encodeJsonl(frames: LandmarkFrame[]): string {
    return frames
        .map(f => JSON.stringify({ frame: f.frame, points: f.points }))
        .join('\n') + '\n';
}

export function decodeJsonl(text: string): Map<number, Points> {
    const out = new Map<number, Points>();
    for (const line of text.split('\n')) {
        if (!line.trim()) continue;
        const obj = JSON.parse(line);
        if (typeof obj.frame !== 'number' || !('points' in obj)) {
            throw new Error(`bad landmark line: ${line.slice(0, 80)}`);
        }
        out.set(obj.frame, obj.points);
    }
    return out;
}

/**
 * Remap table: remap[detectorIndex] = model landmark slot. Must be an
 * injection covering every model slot exactly once so that each pipeline
 * landmark receives a point.
 */
export function validateRemap(remap: number[], modelCount: number): void {
    const targets = remap.filter(v => v >= 0);
    const seen = new Set(targets);
    if (seen.size !== targets.length) {
        throw new Error('remap table maps two detector points to one model slot');
    }
    for (let slot = 0; slot < modelCount; slot++) {
        if (!seen.has(slot)) {
            throw new Error(`remap table leaves model landmark ${slot} unassigned`);
        }
    }
    for (const v of targets) {
        if (v >= modelCount) {
            throw new Error(`remap target ${v} out of range [0, ${modelCount})`);
        }
    }
}

/** Reorder detector points into model landmark order (null passes through). */
export function applyRemap(points: Points, remap: number[], modelCount: number): Points {
    if (points === null) return null;
    if (points.length !== remap.length) {
        throw new Error(`detector gave ${points.length} points, remap expects ${remap.length}`);
    }
    const out: Array<[number, number]> = new Array(modelCount);
    for (let detector = 0; detector < remap.length; detector++) {
        const slot = remap[detector];
        if (slot >= 0) out[slot] = points[detector];
    }
    return out;
}
