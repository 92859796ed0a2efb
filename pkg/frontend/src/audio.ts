/** Voice plumbing: raw PCM chunks, no codec.
 *
 * Capture quantizes microphone float samples to 16-bit PCM and ships
 * fixed-size chunks as opaque payloads. Playback tolerates sequence gaps:
 * a missing chunk is silence, never a stall or a crash.
 */

export const SAMPLE_RATE = 16_000;
export const CHUNK_SAMPLES = 320; // 20 ms at 16 kHz
export const CHUNK_BYTES = CHUNK_SAMPLES * 2;

export function floatToPcm16(samples: Float32Array): Uint8Array {
  const out = new Uint8Array(samples.length * 2);
  const view = new DataView(out.buffer);
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1, samples[i] as number));
    view.setInt16(2 * i, Math.round(clamped * 32767), true);
  }
  return out;
}

export function pcm16ToFloat(bytes: Uint8Array): Float32Array<ArrayBuffer> {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const out = new Float32Array(Math.floor(bytes.length / 2));
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getInt16(2 * i, true) / 32767;
  }
  return out;
}

/** Accumulates arbitrary-sized capture buffers into wire-sized chunks. */
export class Chunker {
  private pending: Float32Array = new Float32Array(0);

  push(samples: Float32Array): Uint8Array[] {
    const merged = new Float32Array(this.pending.length + samples.length);
    merged.set(this.pending, 0);
    merged.set(samples, this.pending.length);
    const chunks: Uint8Array[] = [];
    let off = 0;
    while (merged.length - off >= CHUNK_SAMPLES) {
      chunks.push(floatToPcm16(merged.subarray(off, off + CHUNK_SAMPLES)));
      off += CHUNK_SAMPLES;
    }
    this.pending = merged.slice(off);
    return chunks;
  }
}

/** Reorder-free jitter buffer: chunks come out in seq order, gaps skipped. */
export class PlaybackQueue {
  private heap = new Map<number, Uint8Array>();
  private nextSeq = 1;

  push(seq: number, payload: Uint8Array): void {
    if (seq >= this.nextSeq) this.heap.set(seq, payload);
  }

  /** Next payload in order, or null when nothing playable is buffered. */
  pull(): Uint8Array | null {
    if (this.heap.size === 0) return null;
    let lowest = Infinity;
    for (const seq of this.heap.keys()) if (seq < lowest) lowest = seq;
    const payload = this.heap.get(lowest) as Uint8Array;
    this.heap.delete(lowest);
    this.nextSeq = lowest + 1; // anything older than this is a gap, gone
    return payload;
  }

  get buffered(): number {
    return this.heap.size;
  }

  reset(): void {
    this.heap.clear();
    this.nextSeq = 1;
  }
}

export type MicState = "off" | "live" | "denied";

/** Browser capture; constructed lazily so tests never touch getUserMedia. */
export class Mic {
  state: MicState = "off";
  private ctx: AudioContext | null = null;
  private stream: MediaStream | null = null;

  async start(onChunk: (payload: Uint8Array) => void): Promise<MicState> {
    const chunker = new Chunker();
    try {
      this.stream = await navigator.mediaDevices.getUserMedia({ audio: true });
    } catch {
      this.state = "denied";
      return this.state;
    }
    this.ctx = new AudioContext({ sampleRate: SAMPLE_RATE });
    const source = this.ctx.createMediaStreamSource(this.stream);
    // ScriptProcessor is deprecated but universally available and plenty
    // for 16 kHz mono; a worklet would only add a build step here.
    const node = this.ctx.createScriptProcessor(1024, 1, 1);
    node.onaudioprocess = (ev) => {
      for (const chunk of chunker.push(ev.inputBuffer.getChannelData(0))) {
        onChunk(chunk);
      }
    };
    source.connect(node);
    node.connect(this.ctx.destination);
    this.state = "live";
    return this.state;
  }

  stop(): void {
    this.stream?.getTracks().forEach((t) => t.stop());
    void this.ctx?.close();
    this.ctx = null;
    this.stream = null;
    this.state = "off";
  }
}

/** Pull-based speaker: drains a PlaybackQueue into the audio context. */
export class Speaker {
  private ctx: AudioContext | null = null;
  private at = 0;

  play(queue: PlaybackQueue): void {
    if (this.ctx === null) {
      this.ctx = new AudioContext({ sampleRate: SAMPLE_RATE });
      this.at = this.ctx.currentTime;
    }
    for (let payload = queue.pull(); payload !== null; payload = queue.pull()) {
      const samples = pcm16ToFloat(payload);
      if (samples.length === 0) continue;
      const buf = this.ctx.createBuffer(1, samples.length, SAMPLE_RATE);
      buf.copyToChannel(samples, 0);
      const src = this.ctx.createBufferSource();
      src.buffer = buf;
      src.connect(this.ctx.destination);
      this.at = Math.max(this.at, this.ctx.currentTime + 0.02);
      src.start(this.at);
      this.at += buf.duration;
    }
  }
}
