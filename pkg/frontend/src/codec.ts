/** Frame codec: byte-level twin of the server's framing.
 *
 * Layout per frame: u32 big-endian payload length | u8 kind | payload.
 * CONTROL payloads are UTF-8 JSON, AUDIO is !IQ + samples, MATERIAL is
 * !32sI + chunk bytes. Every constant here must match the server exactly;
 * the vectors test pins that byte for byte.
 */

export const MAX_FRAME = 1 << 20;
export const CHUNK_SIZE = 64 * 1024;

export const CONTROL = 0x01;
export const AUDIO = 0x02;
export const MATERIAL = 0x03;

export const HEADER_LEN = 5;
export const AUDIO_HEADER_LEN = 12;
export const MATERIAL_HEADER_LEN = 36;

export class FrameError extends Error {}
export class Oversize extends FrameError {}
export class BadKind extends FrameError {}
export class MalformedControl extends FrameError {}

export interface Frame {
  kind: number;
  payload: Uint8Array;
}

export interface ControlMsg {
  t: string;
  seq?: number;
  body?: Record<string, unknown>;
}

export interface AudioChunk {
  sessionId: number;
  seq: number;
  payload: Uint8Array;
}

export interface MaterialChunk {
  digest: Uint8Array; // 32 bytes
  index: number;
  payload: Uint8Array;
}

const utf8 = new TextEncoder();
const utf8dec = new TextDecoder("utf-8", { fatal: true });

export function encodeFrame(frame: Frame): Uint8Array {
  if (frame.kind !== CONTROL && frame.kind !== AUDIO && frame.kind !== MATERIAL) {
    throw new BadKind(`unknown frame kind ${frame.kind}`);
  }
  if (frame.payload.length > MAX_FRAME) {
    throw new Oversize(`payload of ${frame.payload.length} bytes exceeds ${MAX_FRAME}`);
  }
  const wire = new Uint8Array(HEADER_LEN + frame.payload.length);
  const view = new DataView(wire.buffer);
  view.setUint32(0, frame.payload.length);
  wire[4] = frame.kind;
  wire.set(frame.payload, HEADER_LEN);
  return wire;
}

/** Decode one frame starting at `offset`; null means more bytes are needed. */
export function decodeFrame(
  data: Uint8Array,
  offset = 0,
): { frame: Frame; end: number } | null {
  if (data.length - offset < HEADER_LEN) return null;
  const view = new DataView(data.buffer, data.byteOffset + offset, HEADER_LEN);
  const length = view.getUint32(0);
  const kind = view.getUint8(4);
  if (length > MAX_FRAME) {
    throw new Oversize(`declared payload of ${length} bytes exceeds ${MAX_FRAME}`);
  }
  if (kind !== CONTROL && kind !== AUDIO && kind !== MATERIAL) {
    throw new BadKind(`unknown frame kind 0x${kind.toString(16)}`);
  }
  const end = offset + HEADER_LEN + length;
  if (data.length < end) return null;
  const payload = data.slice(offset + HEADER_LEN, end);
  if (kind === CONTROL) validateControlPayload(payload);
  return { frame: { kind, payload }, end };
}

function validateControlPayload(payload: Uint8Array): unknown {
  let msg: unknown;
  try {
    msg = JSON.parse(utf8dec.decode(payload));
  } catch (exc) {
    throw new MalformedControl(`control payload is not UTF-8 JSON: ${exc}`);
  }
  if (typeof msg !== "object" || msg === null || Array.isArray(msg) ||
      typeof (msg as { t?: unknown }).t !== "string") {
    throw new MalformedControl("control payload lacks string field 't'");
  }
  return msg;
}

/** Compact JSON with the fixed t/seq/body key order the server uses. */
export function makeControl(
  t: string,
  body?: Record<string, unknown>,
  seq?: number,
): Frame {
  const msg: ControlMsg = { t };
  if (seq !== undefined) msg.seq = seq;
  if (body !== undefined) msg.body = body;
  return { kind: CONTROL, payload: utf8.encode(JSON.stringify(msg)) };
}

export function parseControl(frame: Frame): ControlMsg {
  if (frame.kind !== CONTROL) {
    throw new MalformedControl(`frame kind 0x${frame.kind.toString(16)} is not CONTROL`);
  }
  const msg = validateControlPayload(frame.payload) as ControlMsg;
  if ("body" in msg &&
      (typeof msg.body !== "object" || msg.body === null || Array.isArray(msg.body))) {
    throw new MalformedControl("control body is not an object");
  }
  return msg;
}

// audio seq is u64 on the wire; JS numbers are exact to 2^53, far beyond
// any session's frame count, so we convert through BigInt at the boundary
export function encodeAudio(chunk: AudioChunk): Frame {
  if (chunk.payload.length < 1 || chunk.payload.length > MAX_FRAME - AUDIO_HEADER_LEN) {
    throw new Oversize(`audio payload must be 1..${MAX_FRAME - AUDIO_HEADER_LEN} bytes`);
  }
  const payload = new Uint8Array(AUDIO_HEADER_LEN + chunk.payload.length);
  const view = new DataView(payload.buffer);
  view.setUint32(0, chunk.sessionId);
  view.setBigUint64(4, BigInt(chunk.seq));
  payload.set(chunk.payload, AUDIO_HEADER_LEN);
  return { kind: AUDIO, payload };
}

export function parseAudio(frame: Frame): AudioChunk {
  if (frame.kind !== AUDIO || frame.payload.length < AUDIO_HEADER_LEN + 1) {
    throw new FrameError("not a valid audio frame");
  }
  const view = new DataView(frame.payload.buffer, frame.payload.byteOffset);
  return {
    sessionId: view.getUint32(0),
    seq: Number(view.getBigUint64(4)),
    payload: frame.payload.slice(AUDIO_HEADER_LEN),
  };
}

export function encodeMaterial(chunk: MaterialChunk): Frame {
  if (chunk.digest.length !== 32) throw new FrameError("material digest must be 32 bytes");
  if (chunk.payload.length > CHUNK_SIZE) {
    throw new Oversize(`material chunk payload ${chunk.payload.length} exceeds ${CHUNK_SIZE}`);
  }
  const payload = new Uint8Array(MATERIAL_HEADER_LEN + chunk.payload.length);
  payload.set(chunk.digest, 0);
  new DataView(payload.buffer).setUint32(32, chunk.index);
  payload.set(chunk.payload, MATERIAL_HEADER_LEN);
  return { kind: MATERIAL, payload };
}

export function parseMaterial(frame: Frame): MaterialChunk {
  if (frame.kind !== MATERIAL || frame.payload.length < MATERIAL_HEADER_LEN) {
    throw new FrameError("not a valid material frame");
  }
  return {
    digest: frame.payload.slice(0, 32),
    index: new DataView(frame.payload.buffer, frame.payload.byteOffset).getUint32(32),
    payload: frame.payload.slice(MATERIAL_HEADER_LEN),
  };
}

export function chunkCount(totalSize: number): number {
  return Math.max(1, Math.ceil(totalSize / CHUNK_SIZE));
}

export function toHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

export function fromHex(hex: string): Uint8Array {
  if (hex.length % 2 !== 0 || /[^0-9a-fA-F]/.test(hex)) {
    throw new FrameError(`not a hex string: ${hex}`);
  }
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  }
  return out;
}

/** SHA-256; async because the browser only exposes the subtle API. */
export async function digestBytes(data: Uint8Array): Promise<Uint8Array> {
  const buf = await crypto.subtle.digest(
    "SHA-256",
    data.buffer.slice(data.byteOffset, data.byteOffset + data.byteLength) as ArrayBuffer,
  );
  return new Uint8Array(buf);
}
