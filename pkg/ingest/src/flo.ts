// Middlebury .flo flow files: float32 magic 202021.25, int32 width/height,
// row-major interleaved (u, v) float32, all little-endian.

export const FLO_MAGIC = 202021.25;

export interface FlowField {
    width: number;
    height: number;
    data: Float32Array; // length 2 * width * height, interleaved (u, v)
}

export function encodeFlo(flow: FlowField): Buffer {
    const { width, height, data } = flow;
    if (data.length !== 2 * width * height) {
        throw new Error(`flow data length ${data.length} != 2*${width}*${height}`);
    }
    const buf = Buffer.alloc(12 + 4 * data.length);
    buf.writeFloatLE(FLO_MAGIC, 0);
    buf.writeInt32LE(width, 4);
    buf.writeInt32LE(height, 8);
    for (let i = 0; i < data.length; i++) {
        buf.writeFloatLE(data[i], 12 + 4 * i);
    }
    return buf;
}

export function decodeFlo(buf: Buffer): FlowField {
    if (buf.length < 12) {
        throw new Error('truncated .flo header');
    }
    const magic = buf.readFloatLE(0);
    if (magic !== FLO_MAGIC) {
        throw new Error(`bad .flo magic ${magic}`);
    }
    const width = buf.readInt32LE(4);
    const height = buf.readInt32LE(8);
    const expected = 12 + 8 * width * height;
    if (buf.length !== expected) {
        throw new Error(`.flo payload is ${buf.length} bytes, expected ${expected}`);
    }
    const data = new Float32Array(2 * width * height);
    for (let i = 0; i < data.length; i++) {
        data[i] = buf.readFloatLE(12 + 4 * i);
    }
    return { width, height, data };
}

export function zeroFlow(width: number, height: number): FlowField {
    return { width, height, data: new Float32Array(2 * width * height) };
}

export function floFilename(frameIndex: number): string {
    return `flow_${String(frameIndex).padStart(6, '0')}.flo`;
}
