/** Pure view-model rules; everything here is a function of client state. */

export type PresenceStatus = "online" | "idle" | "offline";

export interface RosterEntry {
  username: string;
  display_name: string;
  role: string;
  status: PresenceStatus;
}

export interface IconStyle {
  colour: "full" | "grey";
  dimmed: boolean;
  idleMark: boolean;
  cssClass: string;
}

/** Connected users render in full colour, disconnected in grey; an idle
 * user keeps colour but is dimmed and marked, so "present but away" is
 * distinguishable from both. */
export function rosterIcon(status: PresenceStatus): IconStyle {
  switch (status) {
    case "online":
      return { colour: "full", dimmed: false, idleMark: false, cssClass: "user-online" };
    case "idle":
      return { colour: "full", dimmed: true, idleMark: true, cssClass: "user-idle" };
    case "offline":
      return { colour: "grey", dimmed: false, idleMark: false, cssClass: "user-offline" };
  }
}

export interface ChatLine {
  seq: number;
  from: string;
  text: string;
  scope: "public" | "private";
  to?: string;
}

/** Insert keeping ascending seq so the board reads in broadcast order even
 * if the transport ever delivered out of order. Returns the index used. */
export function insertBySeq(lines: ChatLine[], line: ChatLine): number {
  let lo = 0;
  let hi = lines.length;
  while (lo < hi) {
    const mid = (lo + hi) >> 1;
    if ((lines[mid] as ChatLine).seq <= line.seq) lo = mid + 1;
    else hi = mid;
  }
  lines.splice(lo, 0, line);
  return lo;
}

export function chatLabel(line: ChatLine, you: string): string {
  if (line.scope === "private") {
    return line.from === you ? `to ${line.to}` : `${line.from} (private)`;
  }
  return line.from;
}
