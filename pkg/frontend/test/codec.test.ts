// Byte-for-byte conformance against frames frozen from the server codec.
// vectors.json is generated by gen_vectors.py; regenerate it there, never
// edit it by hand.
import { describe, expect, it } from "vitest";
import {
  AUDIO,
  BadKind,
  CONTROL,
  FrameError,
  MATERIAL,
  MalformedControl,
  Oversize,
  chunkCount,
  decodeFrame,
  digestBytes,
  encodeAudio,
  encodeFrame,
  encodeMaterial,
  fromHex,
  makeControl,
  parseAudio,
  parseControl,
  parseMaterial,
  toHex,
} from "../src/codec.js";
import vectors from "./vectors.json";

interface FrameVector {
  name: string;
  hex: string;
  kind: number;
  reencode: boolean;
  t?: string;
  seq?: number | null;
  body?: Record<string, unknown> | null;
  session_id?: number;
  payload_hex?: string;
  digest_hex?: string;
  index?: number;
}

const frames = vectors.frames as FrameVector[];

describe("frozen frame vectors", () => {
  for (const vec of frames) {
    it(`decodes ${vec.name}`, () => {
      const wire = fromHex(vec.hex);
      const got = decodeFrame(wire);
      expect(got).not.toBeNull();
      const { frame, end } = got!;
      expect(end).toBe(wire.length);
      expect(frame.kind).toBe(vec.kind);

      if (vec.kind === CONTROL) {
        const msg = parseControl(frame);
        expect(msg.t).toBe(vec.t);
        expect(msg.seq).toBe(vec.seq ?? undefined);
        expect(msg.body ?? null).toEqual(vec.body ?? null);
      } else if (vec.kind === AUDIO) {
        const chunk = parseAudio(frame);
        expect(chunk.sessionId).toBe(vec.session_id);
        expect(chunk.seq).toBe(vec.seq);
        expect(toHex(chunk.payload)).toBe(vec.payload_hex);
      } else {
        const chunk = parseMaterial(frame);
        expect(toHex(chunk.digest)).toBe(vec.digest_hex);
        expect(chunk.index).toBe(vec.index);
        expect(toHex(chunk.payload)).toBe(vec.payload_hex);
      }
    });
  }

  for (const vec of frames.filter((v) => v.reencode)) {
    it(`re-encodes ${vec.name} byte-identically`, () => {
      let wire: Uint8Array;
      if (vec.kind === CONTROL) {
        wire = encodeFrame(
          makeControl(vec.t!, vec.body ?? undefined, vec.seq ?? undefined),
        );
      } else if (vec.kind === AUDIO) {
        wire = encodeFrame(
          encodeAudio({
            sessionId: vec.session_id!,
            seq: vec.seq!,
            payload: fromHex(vec.payload_hex!),
          }),
        );
      } else {
        wire = encodeFrame(
          encodeMaterial({
            digest: fromHex(vec.digest_hex!),
            index: vec.index!,
            payload: fromHex(vec.payload_hex!),
          }),
        );
      }
      expect(toHex(wire)).toBe(vec.hex);
    });
  }

  it("decodes the whole corpus as one stream", () => {
    const stream = fromHex(vectors.stream_hex);
    let offset = 0;
    let count = 0;
    while (offset < stream.length) {
      const got = decodeFrame(stream, offset);
      expect(got).not.toBeNull();
      offset = got!.end;
      count += 1;
    }
    expect(count).toBe(frames.length);
    expect(offset).toBe(stream.length);
  });
});

const ERRORS = {
  Oversize,
  BadKind,
  MalformedControl,
} as const;

describe("malformed input", () => {
  for (const vec of vectors.malformed) {
    it(vec.name, () => {
      const wire = fromHex(vec.hex);
      if (vec.outcome === "incomplete") {
        expect(decodeFrame(wire)).toBeNull();
      } else {
        expect(() => decodeFrame(wire)).toThrow(
          ERRORS[vec.outcome as keyof typeof ERRORS],
        );
      }
    });
  }

  for (const vec of vectors.bad_parse) {
    it(`${vec.name} fails in the ${vec.parser} parser`, () => {
      const got = decodeFrame(fromHex(vec.hex));
      expect(got).not.toBeNull();
      const parse = vec.parser === "audio" ? parseAudio : parseMaterial;
      expect(() => parse(got!.frame)).toThrow(FrameError);
    });
  }

  it("rejects a non-object control body on parse", () => {
    const payload = new TextEncoder().encode('{"t":"chat_evt","body":[1]}');
    expect(() => parseControl({ kind: CONTROL, payload })).toThrow(
      MalformedControl,
    );
  });

  it("rejects oversize payloads on encode", () => {
    const big = new Uint8Array((1 << 20) + 1);
    expect(() => encodeFrame({ kind: AUDIO, payload: big })).toThrow(Oversize);
  });

  it("rejects unknown kinds on encode", () => {
    expect(() => encodeFrame({ kind: 9, payload: new Uint8Array() })).toThrow(
      BadKind,
    );
  });
});

describe("shared helpers agree with the server", () => {
  it("chunk counts", () => {
    for (const { size, count } of vectors.chunk_counts) {
      expect(chunkCount(size)).toBe(count);
    }
  });

  it("sha-256 digests", async () => {
    for (const { data_hex, digest_hex } of vectors.digests) {
      expect(toHex(await digestBytes(fromHex(data_hex)))).toBe(digest_hex);
    }
  });
});

describe("random round trips", () => {
  // deterministic LCG so a failure is reproducible
  let state = 0x5eed;
  const rand = (n: number) => {
    state = (state * 1103515245 + 12345) & 0x7fffffff;
    return state % n;
  };

  it("survives 2000 mixed frames", () => {
    const types = ["login", "chat_pub", "cursor", "page_set", "made_up_type"];
    for (let i = 0; i < 2000; i++) {
      const pick = rand(3);
      let frame;
      if (pick === 0) {
        const body =
          rand(2) === 0 ? undefined : { n: rand(1000), s: "x".repeat(rand(20)) };
        const seq = rand(2) === 0 ? undefined : rand(100000);
        frame = makeControl(types[rand(types.length)]!, body, seq);
      } else if (pick === 1) {
        const payload = new Uint8Array(1 + rand(500));
        for (let j = 0; j < payload.length; j++) payload[j] = rand(256);
        frame = encodeAudio({ sessionId: rand(1 << 30), seq: rand(1 << 30), payload });
      } else {
        const digest = new Uint8Array(32);
        for (let j = 0; j < 32; j++) digest[j] = rand(256);
        frame = encodeMaterial({
          digest,
          index: rand(200),
          payload: new Uint8Array(rand(300)),
        });
      }
      const wire = encodeFrame(frame);
      const got = decodeFrame(wire);
      expect(got).not.toBeNull();
      expect(got!.end).toBe(wire.length);
      expect(got!.frame.kind).toBe(frame.kind);
      expect(toHex(got!.frame.payload)).toBe(toHex(frame.payload));
    }
  });
});
