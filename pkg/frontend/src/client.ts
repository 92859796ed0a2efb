/** Classroom client: one WebSocket, one event loop, one state owner.
 *
 * Every piece of view state lives on `state` and is mutated only by the
 * socket message handler (frames are processed strictly in arrival order
 * even though digest checks are async). The UI layer reads state and
 * subscribes to change events; it never writes here.
 */

import {
  AUDIO,
  CONTROL,
  MATERIAL,
  type ControlMsg,
  type Frame,
  decodeFrame,
  digestBytes,
  encodeAudio,
  encodeFrame,
  makeControl,
  parseAudio,
  parseControl,
  parseMaterial,
  toHex,
} from "./codec.js";
import { type ChatLine, type RosterEntry, insertBySeq } from "./views.js";

export interface You {
  username: string;
  display_name: string;
  role: "teacher" | "student";
}

export interface MaterialInfo {
  material_id: string;
  name: string;
  owner: string;
  pages: string[]; // page digests, hex
  sizes: number[];
}

export interface PageState {
  materialId: string;
  pageIndex: number;
  digest: string;
  size: number;
  bytesReady: boolean;
}

export interface SessionState {
  sessionId: number;
  teacher: string;
  student: string;
}

export interface InviteState {
  sessionId: number;
  teacher: string;
}

export interface ErrorInfo {
  code: string;
  op?: string;
  detail?: string;
}

export interface ClassroomState {
  you: You | null;
  roster: Map<string, RosterEntry>;
  chat: ChatLine[];
  materials: MaterialInfo[];
  invite: InviteState | null;
  session: SessionState | null;
  page: PageState | null;
  peerCursor: { x: number; y: number } | null;
  lastError: ErrorInfo | null;
}

export interface ClientEvents {
  open: void;
  login: You;
  loginErr: string;
  roster: void;
  chat: ChatLine;
  materials: MaterialInfo[];
  invite: InviteState;
  sessionStart: SessionState;
  sessionEnd: string; // reason
  page: PageState;
  bytesReady: string; // digest hex
  cursor: { x: number; y: number };
  audio: { seq: number; payload: Uint8Array };
  error: ErrorInfo;
  close: void;
}

type Handler<K extends keyof ClientEvents> = (arg: ClientEvents[K]) => void;

/** The subset of the DOM WebSocket the client needs; the `ws` package
 * in tests satisfies it too. */
export interface WsLike {
  binaryType: string;
  onopen: ((ev: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  send(data: Uint8Array): void;
  close(): void;
}

export interface ClientOptions {
  url: string;
  cursorPeriodMs?: number;
  connect?: (url: string) => WsLike;
}

interface Fetch {
  parts: Map<number, Uint8Array>;
}

export class ClassroomClient {
  readonly state: ClassroomState = {
    you: null,
    roster: new Map(),
    chat: [],
    materials: [],
    invite: null,
    session: null,
    page: null,
    peerCursor: null,
    lastError: null,
  };
  readonly cache = new Map<string, Uint8Array>();

  private ws: WsLike | null = null;
  private readonly url: string;
  private readonly cursorPeriodMs: number;
  private readonly connectWs: (url: string) => WsLike;
  private handlers = new Map<string, Set<(arg: never) => void>>();
  private fetching = new Map<string, Fetch>();
  private chain: Promise<void> = Promise.resolve();
  private audioSeq = 0;
  private cursorTimer: ReturnType<typeof setInterval> | null = null;
  private pendingCursor: { x: number; y: number } | null = null;
  private cursorSentAt = -Infinity;

  constructor(opts: ClientOptions) {
    this.url = opts.url;
    this.cursorPeriodMs = opts.cursorPeriodMs ?? 1000;
    this.connectWs =
      opts.connect ?? ((url) => new WebSocket(url) as unknown as WsLike);
  }

  connect(): void {
    const ws = this.connectWs(this.url);
    ws.binaryType = "arraybuffer";
    ws.onopen = () => this.emit("open", undefined);
    ws.onmessage = (ev) => {
      // serialize through a chain: sha-256 checks are async and frame
      // N+1 must not observe state from before frame N finished
      this.chain = this.chain.then(() => this.handleData(ev.data));
    };
    ws.onclose = () => {
      this.stopCursorTimer();
      this.emit("close", undefined);
    };
    ws.onerror = () => {};
    this.ws = ws;
  }

  close(): void {
    this.stopCursorTimer();
    this.ws?.close();
  }

  on<K extends keyof ClientEvents>(event: K, fn: Handler<K>): void {
    let set = this.handlers.get(event);
    if (set === undefined) {
      set = new Set();
      this.handlers.set(event, set);
    }
    set.add(fn as (arg: never) => void);
  }

  off<K extends keyof ClientEvents>(event: K, fn: Handler<K>): void {
    this.handlers.get(event)?.delete(fn as (arg: never) => void);
  }

  /** Promise for the next matching event; handy for tests and login flows. */
  waitFor<K extends keyof ClientEvents>(
    event: K,
    pred?: (arg: ClientEvents[K]) => boolean,
    timeoutMs = 5000,
  ): Promise<ClientEvents[K]> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        this.off(event, fn);
        reject(new Error(`timed out waiting for ${String(event)}`));
      }, timeoutMs);
      const fn = (arg: ClientEvents[K]) => {
        if (pred && !pred(arg)) return;
        clearTimeout(timer);
        this.off(event, fn);
        resolve(arg);
      };
      this.on(event, fn);
    });
  }

  private emit<K extends keyof ClientEvents>(event: K, arg: ClientEvents[K]): void {
    const set = this.handlers.get(event);
    if (set === undefined) return;
    for (const fn of [...set]) (fn as Handler<K>)(arg);
  }

  // --- outbound (sends only; no state writes outside the socket handler) ---

  private send(t: string, body?: Record<string, unknown>): void {
    this.ws?.send(encodeFrame(makeControl(t, body)));
  }

  login(username: string, password: string): void {
    this.send("login", { username, password });
  }

  sendPublic(text: string): void {
    this.send("chat_pub", { text });
  }

  sendPrivate(to: string, text: string): void {
    this.send("chat_prv", { to, text });
  }

  reportActivity(): void {
    this.send("activity");
  }

  requestUserList(): void {
    this.send("user_list");
  }

  listMaterials(): void {
    this.send("mat_list");
  }

  invite(student: string): void {
    this.send("invite", { student });
  }

  respondInvite(sessionId: number, accept: boolean): void {
    this.send("invite_resp", { session_id: sessionId, accept });
  }

  setPage(materialId: string, pageIndex: number): void {
    const sess = this.state.session;
    if (sess === null) return;
    this.send("page_set", {
      session_id: sess.sessionId,
      material_id: materialId,
      page_index: pageIndex,
    });
  }

  endSession(): void {
    const sess = this.state.session;
    if (sess === null) return;
    this.send("session_end", { session_id: sess.sessionId });
  }

  sendAudio(payload: Uint8Array): void {
    const sess = this.state.session;
    if (sess === null) return;
    this.audioSeq += 1;
    this.ws?.send(
      encodeFrame(
        encodeAudio({ sessionId: sess.sessionId, seq: this.audioSeq, payload }),
      ),
    );
  }

  /** Publish a normalized pointer position, rate-limited to the cursor
   * period. Out-of-range positions are dropped here as a backstop; the
   * view should already have mapped them to "nothing to publish". */
  setCursor(x: number, y: number): void {
    if (!(x >= 0 && x <= 1 && y >= 0 && y <= 1)) return;
    if (this.state.session === null) return;
    this.pendingCursor = { x, y };
    if (Date.now() - this.cursorSentAt >= this.cursorPeriodMs) this.flushCursor();
  }

  private flushCursor(): void {
    const sess = this.state.session;
    const cur = this.pendingCursor;
    if (sess === null || cur === null) return;
    this.pendingCursor = null;
    this.cursorSentAt = Date.now();
    this.send("cursor", { session_id: sess.sessionId, x: cur.x, y: cur.y });
  }

  private startCursorTimer(): void {
    this.stopCursorTimer();
    this.cursorTimer = setInterval(() => this.flushCursor(), this.cursorPeriodMs);
  }

  private stopCursorTimer(): void {
    if (this.cursorTimer !== null) clearInterval(this.cursorTimer);
    this.cursorTimer = null;
    this.pendingCursor = null;
    this.cursorSentAt = -Infinity;
  }

  // --- inbound (sole mutator of `state`) ---

  private async handleData(data: unknown): Promise<void> {
    let bytes: Uint8Array;
    if (data instanceof ArrayBuffer) bytes = new Uint8Array(data);
    else if (data instanceof Uint8Array) bytes = data;
    else return; // text frames are a gateway violation; it closes on us anyway
    let offset = 0;
    while (offset < bytes.length) {
      const got = decodeFrame(bytes, offset);
      if (got === null) return; // truncated: nothing sane to do client-side
      offset = got.end;
      const frame = got.frame;
      if (frame.kind === CONTROL) await this.handleControl(parseControl(frame));
      else if (frame.kind === AUDIO) this.handleAudio(frame);
      else if (frame.kind === MATERIAL) this.handleMaterial(frame);
    }
  }

  private async handleControl(msg: ControlMsg): Promise<void> {
    const body = (msg.body ?? {}) as Record<string, unknown>;
    const st = this.state;
    switch (msg.t) {
      case "login_ok": {
        st.you = body["you"] as You;
        st.roster = new Map();
        for (const entry of body["users"] as RosterEntry[]) {
          st.roster.set(entry.username, entry);
        }
        this.emit("login", st.you);
        this.emit("roster", undefined);
        break;
      }
      case "login_err":
        this.emit("loginErr", String(body["code"]));
        break;
      case "user_list": {
        st.roster = new Map();
        for (const entry of body["users"] as RosterEntry[]) {
          st.roster.set(entry.username, entry);
        }
        this.emit("roster", undefined);
        break;
      }
      case "presence": {
        const username = String(body["username"]);
        const status = body["status"] as RosterEntry["status"];
        const entry = st.roster.get(username);
        if (entry !== undefined) {
          entry.status = status;
        } else {
          // someone registered after our login: stub now, refresh for real
          st.roster.set(username, {
            username,
            display_name: username,
            role: "student",
            status,
          });
          this.send("user_list");
        }
        this.emit("roster", undefined);
        break;
      }
      case "chat_evt": {
        const line: ChatLine = {
          seq: msg.seq ?? 0,
          from: String(body["from"]),
          text: String(body["text"]),
          scope: body["scope"] === "private" ? "private" : "public",
        };
        if (body["to"] !== undefined) line.to = String(body["to"]);
        insertBySeq(st.chat, line);
        this.emit("chat", line);
        break;
      }
      case "mat_list_ok":
        st.materials = body["materials"] as MaterialInfo[];
        this.emit("materials", st.materials);
        break;
      case "mat_meta": {
        const mat = body["material"] as MaterialInfo;
        const i = st.materials.findIndex((m) => m.material_id === mat.material_id);
        if (i >= 0) st.materials[i] = mat;
        else st.materials.push(mat);
        this.emit("materials", st.materials);
        break;
      }
      case "invite_evt":
        st.invite = {
          sessionId: Number(body["session_id"]),
          teacher: String(body["teacher"]),
        };
        this.emit("invite", st.invite);
        break;
      case "session_start": {
        st.invite = null;
        st.session = {
          sessionId: Number(body["session_id"]),
          teacher: String(body["teacher"]),
          student: String(body["student"]),
        };
        this.audioSeq = 0;
        this.startCursorTimer();
        this.emit("sessionStart", st.session);
        const page = body["page"];
        if (page !== null && page !== undefined) {
          this.applyPage(page as Record<string, unknown>);
        }
        break;
      }
      case "page_evt":
        this.applyPage(body);
        break;
      case "cursor_evt": {
        st.peerCursor = { x: Number(body["x"]), y: Number(body["y"]) };
        this.emit("cursor", st.peerCursor);
        break;
      }
      case "session_end_evt": {
        st.session = null;
        st.page = null;
        st.peerCursor = null;
        st.invite = null;
        this.stopCursorTimer();
        this.emit("sessionEnd", String(body["reason"]));
        break;
      }
      case "mat_done":
        await this.finishFetch(String(body["digest"]));
        break;
      case "upload_ok":
        break; // uploads go through the admin tool, not the browser
      case "error": {
        const err: ErrorInfo = { code: String(body["code"]) };
        if (body["op"] !== undefined) err.op = String(body["op"]);
        if (body["detail"] !== undefined) err.detail = String(body["detail"]);
        st.lastError = err;
        if (err.op === "mat_need" && err.detail !== undefined) {
          this.fetching.delete(err.detail); // that fetch will never finish
        }
        this.emit("error", err);
        break;
      }
      default:
        break; // unknown server message: ignore, never crash the loop
    }
  }

  private handleAudio(frame: Frame): void {
    const chunk = parseAudio(frame);
    const sess = this.state.session;
    if (sess === null || chunk.sessionId !== sess.sessionId) return;
    this.emit("audio", { seq: chunk.seq, payload: chunk.payload });
  }

  private handleMaterial(frame: Frame): void {
    const chunk = parseMaterial(frame);
    const hex = toHex(chunk.digest);
    const fetch = this.fetching.get(hex);
    if (fetch === undefined) return; // not ours (or already abandoned)
    fetch.parts.set(chunk.index, chunk.payload);
  }

  private applyPage(body: Record<string, unknown>): void {
    const digest = String(body["digest"]);
    const page: PageState = {
      materialId: String(body["material_id"]),
      pageIndex: Number(body["page_index"]),
      digest,
      size: Number(body["size"]),
      bytesReady: this.cache.has(digest),
    };
    this.state.page = page;
    this.state.peerCursor = null; // stale against the new page
    if (!page.bytesReady && !this.fetching.has(digest)) {
      this.fetching.set(digest, { parts: new Map() });
      this.send("mat_need", { digest });
    }
    this.emit("page", page);
  }

  private async finishFetch(hex: string): Promise<void> {
    const fetch = this.fetching.get(hex);
    if (fetch === undefined) return;
    this.fetching.delete(hex);
    const indexes = [...fetch.parts.keys()].sort((a, b) => a - b);
    if (indexes.some((v, i) => v !== i)) return; // hole in the transfer
    let total = 0;
    for (const part of fetch.parts.values()) total += part.length;
    const bytes = new Uint8Array(total);
    let off = 0;
    for (const i of indexes) {
      const part = fetch.parts.get(i) as Uint8Array;
      bytes.set(part, off);
      off += part.length;
    }
    const check = await digestBytes(bytes);
    if (toHex(check) !== hex) return; // corrupt transfer: drop, page stays pending
    this.cache.set(hex, bytes);
    const page = this.state.page;
    if (page !== null && page.digest === hex) {
      page.bytesReady = true;
      this.emit("page", page);
    }
    this.emit("bytesReady", hex);
  }
}
