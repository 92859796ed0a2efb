/** Browser wiring: DOM in, client calls out, client events back to DOM.
 *
 * All classroom state belongs to ClassroomClient; this file only renders
 * it and translates input events (clicks, pointer moves, mic toggles)
 * into client calls. No logic here is worth unit testing; the pure parts
 * live in views.ts, coords.ts, audio.ts and are tested there.
 */

import { Mic, PlaybackQueue, Speaker } from "./audio.js";
import { ClassroomClient } from "./client.js";
import { type Rect, normToPixel, pixelToNorm } from "./coords.js";
import { chatLabel, rosterIcon } from "./views.js";

function $<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

function gatewayUrl(): string {
  const fromQuery = new URLSearchParams(location.search).get("gateway");
  if (fromQuery) return fromQuery;
  return `ws://${location.hostname || "127.0.0.1"}:8711`;
}

const loginPanel = $<HTMLDivElement>("login-panel");
const loginUser = $<HTMLInputElement>("login-user");
const loginPass = $<HTMLInputElement>("login-pass");
const loginUrl = $<HTMLInputElement>("login-url");
const loginBtn = $<HTMLButtonElement>("login-btn");
const loginErr = $<HTMLDivElement>("login-err");

const app = $<HTMLDivElement>("app");
const rosterList = $<HTMLUListElement>("roster-list");
const chatBoard = $<HTMLDivElement>("chat-board");
const chatScope = $<HTMLSelectElement>("chat-scope");
const chatInput = $<HTMLInputElement>("chat-input");
const chatSend = $<HTMLButtonElement>("chat-send");

const statusLine = $<HTMLDivElement>("status-line");
const errorLine = $<HTMLDivElement>("error-line");
const pageWrap = $<HTMLDivElement>("page-wrap");
const pageImg = $<HTMLImageElement>("page-img");
const peerCursor = $<HTMLDivElement>("peer-cursor");

const controls = $<HTMLDivElement>("teacher-controls");
const matSelect = $<HTMLSelectElement>("mat-select");
const matShow = $<HTMLButtonElement>("mat-show");
const pagePrev = $<HTMLButtonElement>("page-prev");
const pageNext = $<HTMLButtonElement>("page-next");
const pageGoto = $<HTMLInputElement>("page-goto");

const micBtn = $<HTMLButtonElement>("mic-btn");
const micState = $<HTMLSpanElement>("mic-state");
const endBtn = $<HTMLButtonElement>("end-session");

const inviteModal = $<HTMLDivElement>("invite-modal");
const inviteText = $<HTMLDivElement>("invite-text");
const inviteAccept = $<HTMLButtonElement>("invite-accept");
const inviteDecline = $<HTMLButtonElement>("invite-decline");

loginUrl.value = gatewayUrl();

let client: ClassroomClient | null = null;
const mic = new Mic();
const playback = new PlaybackQueue();
const speaker = new Speaker();
let pageUrl: string | null = null;
let lastActivitySent = 0;

function imageRect(): Rect {
  const r = pageImg.getBoundingClientRect();
  return { left: r.left, top: r.top, width: r.width, height: r.height };
}

function renderRoster(c: ClassroomClient): void {
  rosterList.textContent = "";
  const you = c.state.you;
  for (const entry of c.state.roster.values()) {
    const li = document.createElement("li");
    const style = rosterIcon(entry.status);
    const icon = document.createElement("span");
    icon.className = `icon ${style.cssClass}`;
    icon.textContent = entry.role === "teacher" ? "T" : "S";
    li.appendChild(icon);
    const name = document.createElement("span");
    name.className = "name";
    name.textContent =
      entry.display_name + (style.idleMark ? " (away)" : "");
    li.appendChild(name);
    if (
      you?.role === "teacher" &&
      entry.role === "student" &&
      entry.status !== "offline" &&
      c.state.session === null
    ) {
      const btn = document.createElement("button");
      btn.textContent = "invite";
      btn.onclick = () => c.invite(entry.username);
      li.appendChild(btn);
    }
    rosterList.appendChild(li);
  }
}

function renderChat(c: ClassroomClient): void {
  chatBoard.textContent = "";
  const you = c.state.you?.username ?? "";
  for (const line of c.state.chat) {
    const div = document.createElement("div");
    div.className = line.scope === "private" ? "chat-line private" : "chat-line";
    div.textContent = chatLabel(line, you);
    chatBoard.appendChild(div);
  }
  chatBoard.scrollTop = chatBoard.scrollHeight;
}

function renderScopeOptions(c: ClassroomClient): void {
  const current = chatScope.value;
  chatScope.textContent = "";
  const pub = document.createElement("option");
  pub.value = "";
  pub.textContent = "everyone";
  chatScope.appendChild(pub);
  for (const entry of c.state.roster.values()) {
    if (entry.username === c.state.you?.username) continue;
    if (entry.status === "offline") continue;
    const opt = document.createElement("option");
    opt.value = entry.username;
    opt.textContent = `to ${entry.display_name}`;
    chatScope.appendChild(opt);
  }
  chatScope.value = [...chatScope.options].some((o) => o.value === current)
    ? current
    : "";
}

function renderStatus(c: ClassroomClient): void {
  const sess = c.state.session;
  const page = c.state.page;
  if (sess === null) {
    statusLine.textContent = "no session";
    return;
  }
  const me = c.state.you?.username;
  const peer = me === sess.teacher ? sess.student : sess.teacher;
  let text = `session #${sess.sessionId} with ${peer}`;
  if (page !== null) {
    text += ` | page ${page.pageIndex + 1}`;
    text += page.bytesReady ? "" : " (loading...)";
  }
  statusLine.textContent = text;
}

function renderPage(c: ClassroomClient): void {
  const page = c.state.page;
  renderStatus(c);
  if (page === null || !page.bytesReady) {
    pageImg.removeAttribute("src");
    pageImg.classList.add("empty");
    return;
  }
  const bytes = c.cache.get(page.digest);
  if (bytes === undefined) return;
  if (pageUrl !== null) URL.revokeObjectURL(pageUrl);
  const copy = new Uint8Array(bytes); // detach from cache for the blob
  pageUrl = URL.createObjectURL(new Blob([copy.buffer]));
  pageImg.src = pageUrl;
  pageImg.classList.remove("empty");
}

function renderPeerCursor(c: ClassroomClient): void {
  const cur = c.state.peerCursor;
  if (cur === null || c.state.page === null) {
    peerCursor.style.display = "none";
    return;
  }
  const px = normToPixel(cur, imageRect());
  const wrapRect = pageWrap.getBoundingClientRect();
  peerCursor.style.display = "block";
  peerCursor.style.left = `${px.x - wrapRect.left}px`;
  peerCursor.style.top = `${px.y - wrapRect.top}px`;
}

function renderSessionControls(c: ClassroomClient): void {
  const inSession = c.state.session !== null;
  const isTeacher = c.state.you?.role === "teacher";
  controls.style.display = inSession && isTeacher ? "flex" : "none";
  endBtn.style.display = inSession ? "inline-block" : "none";
  micBtn.disabled = !inSession;
  renderRoster(c); // invite buttons depend on session state
}

function renderMaterials(c: ClassroomClient): void {
  matSelect.textContent = "";
  for (const mat of c.state.materials) {
    const opt = document.createElement("option");
    opt.value = mat.material_id;
    opt.textContent = `${mat.name} (${mat.pages.length}p)`;
    matSelect.appendChild(opt);
  }
}

function setMicState(state: "off" | "live" | "denied"): void {
  micState.className = `mic-${state}`;
  micState.textContent =
    state === "live" ? "mic on" : state === "denied" ? "mic blocked" : "muted";
  micBtn.textContent = state === "live" ? "mute" : "unmute";
}

function attach(c: ClassroomClient): void {
  c.on("login", () => {
    loginPanel.style.display = "none";
    app.style.display = "grid";
    c.listMaterials();
    renderRoster(c);
    renderScopeOptions(c);
    renderStatus(c);
  });
  c.on("loginErr", (code) => {
    loginErr.textContent = `login failed: ${code}`;
    loginBtn.disabled = false;
  });
  c.on("roster", () => {
    renderRoster(c);
    renderScopeOptions(c);
  });
  c.on("chat", () => renderChat(c));
  c.on("materials", () => renderMaterials(c));
  c.on("invite", (inv) => {
    inviteText.textContent = `${inv.teacher} invites you to a lesson`;
    inviteModal.style.display = "flex";
  });
  c.on("sessionStart", () => {
    inviteModal.style.display = "none";
    playback.reset();
    renderSessionControls(c);
    renderStatus(c);
  });
  c.on("sessionEnd", (reason) => {
    inviteModal.style.display = "none";
    statusLine.textContent = `session ended (${reason})`;
    mic.stop();
    setMicState("off");
    renderSessionControls(c);
    renderPage(c);
    renderPeerCursor(c);
  });
  c.on("page", () => {
    renderPage(c);
    renderPeerCursor(c);
  });
  c.on("cursor", () => renderPeerCursor(c));
  c.on("audio", ({ seq, payload }) => {
    playback.push(seq, payload);
    speaker.play(playback);
  });
  c.on("error", (err) => {
    errorLine.textContent = `${err.code}${err.op ? ` (${err.op})` : ""}`;
    setTimeout(() => {
      if (errorLine.textContent?.startsWith(err.code)) errorLine.textContent = "";
    }, 4000);
  });
  c.on("close", () => {
    if (c.state.you === null) {
      // never made it past the door: let the user retry
      loginErr.textContent = "cannot reach the gateway";
      loginBtn.disabled = false;
      return;
    }
    statusLine.textContent = "disconnected";
    micBtn.disabled = true;
  });
}

loginBtn.onclick = () => {
  loginErr.textContent = "";
  loginBtn.disabled = true;
  client = new ClassroomClient({ url: loginUrl.value });
  attach(client);
  client.on("open", () =>
    client?.login(loginUser.value.trim(), loginPass.value),
  );
  client.connect();
};

chatSend.onclick = () => {
  const text = chatInput.value.trim();
  if (text === "" || client === null) return;
  if (chatScope.value === "") client.sendPublic(text);
  else client.sendPrivate(chatScope.value, text);
  chatInput.value = "";
};
chatInput.onkeydown = (ev) => {
  if (ev.key === "Enter") chatSend.click();
};

inviteAccept.onclick = () => {
  const inv = client?.state.invite;
  if (client && inv) client.respondInvite(inv.sessionId, true);
  inviteModal.style.display = "none";
};
inviteDecline.onclick = () => {
  const inv = client?.state.invite;
  if (client && inv) client.respondInvite(inv.sessionId, false);
  inviteModal.style.display = "none";
};

matShow.onclick = () => {
  if (client && matSelect.value) client.setPage(matSelect.value, 0);
};
pagePrev.onclick = () => movePage(-1);
pageNext.onclick = () => movePage(1);
pageGoto.onchange = () => {
  const page = client?.state.page;
  const n = Number(pageGoto.value);
  if (client && page && Number.isInteger(n) && n >= 1) {
    client.setPage(page.materialId, n - 1);
  }
  pageGoto.value = "";
};

function movePage(delta: number): void {
  const page = client?.state.page;
  if (client === null || page === null || page === undefined) return;
  client.setPage(page.materialId, page.pageIndex + delta);
}

endBtn.onclick = () => client?.endSession();

micBtn.onclick = async () => {
  if (client === null) return;
  if (mic.state === "live") {
    mic.stop();
    setMicState("off");
    return;
  }
  const state = await mic.start((chunk) => client?.sendAudio(chunk));
  setMicState(state);
};

pageWrap.onmousemove = (ev) => {
  // own pointer stays a local affordance; only the normalized position
  // travels, and positions outside the image travel nowhere
  const norm = pixelToNorm(ev.clientX, ev.clientY, imageRect());
  if (norm !== null) client?.setCursor(norm.x, norm.y);
};

window.addEventListener("resize", () => {
  if (client) renderPeerCursor(client);
});

for (const kind of ["mousemove", "keydown"] as const) {
  document.addEventListener(kind, () => {
    const now = Date.now();
    if (client?.state.you && now - lastActivitySent > 30_000) {
      lastActivitySent = now;
      client.reportActivity();
    }
  });
}

setMicState("off");
