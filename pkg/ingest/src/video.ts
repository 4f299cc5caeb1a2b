// Frame sources. The portable one is a directory of numbered PNG frames
// (what ffmpeg-style extractors emit); anything that yields RGBA frames in
// order satisfies the interface.
import fs from 'fs/promises';
import path from 'path';
import { PNG } from 'pngjs';

export interface Frame {
    width: number;
    height: number;
    rgba: Buffer;
}

export interface FrameSource {
    frameCount(): Promise<number>;
    readFrame(index: number): Promise<Frame>;
}

export class PngDirectorySource implements FrameSource {
    private files: string[] | null = null;

    constructor(private readonly dir: string) {}

    private async list(): Promise<string[]> {
        if (this.files === null) {
            const all = await fs.readdir(this.dir);
            this.files = all.filter(f => f.toLowerCase().endsWith('.png')).sort();
            if (this.files.length === 0) {
                throw new Error(`no PNG frames in ${this.dir}`);
            }
        }
        return this.files;
    }

    async frameCount(): Promise<number> {
        return (await this.list()).length;
    }

    async readFrame(index: number): Promise<Frame> {
        const files = await this.list();
        if (index < 0 || index >= files.length) {
            throw new Error(`frame index ${index} out of range`);
        }
        const buf = await fs.readFile(path.join(this.dir, files[index]));
        const png = PNG.sync.read(buf);
        return { width: png.width, height: png.height, rgba: png.data };
    }
}

export function encodePng(frame: Frame): Buffer {
    const png = new PNG({ width: frame.width, height: frame.height });
    frame.rgba.copy(png.data);
    return PNG.sync.write(png);
}

export async function openFrameSource(videoPath: string): Promise<FrameSource> {
    const stat = await fs.stat(videoPath);
    if (stat.isDirectory()) {
        return new PngDirectorySource(videoPath);
    }
    throw new Error(
        `${videoPath}: only frame directories are supported; decode the video ` +
        'to numbered PNGs first (e.g. with ffmpeg)');
}
