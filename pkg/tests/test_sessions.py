"""Invites, live sessions, shared pages, cursors, and voice relay."""

import time

import pytest
from conftest import RawConn, open_session

from eteach.client import (
    AudioReceived, InviteReceived, PageBytesReady, PageChanged, PeerCursor,
    SessionEnded, SessionStarted,
)
from eteach.protocol import AudioChunk, encode_audio, encode_frame

TWO_TEACHERS = {
    "cikgu": ("pw-cikgu", "teacher", "Cikgu"),
    "ustaz": ("pw-ustaz", "teacher", "Ustaz"),
    "ali": ("pw-ali", "student", "Ali"),
    "siti": ("pw-siti", "student", "Siti"),
}

PAGES = [b"alpha" * 200, b"bravo" * 300, b"charlie" * 400]


def classroom(harness, **cfg):
    return harness.server(materials=[("notes", "cikgu", PAGES)], **cfg)


class TestInvites:
    def test_invite_reaches_student(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        t.client.invite("ali")
        invite = s.expect(InviteReceived)
        assert invite.teacher == "cikgu"
        assert invite.session_id > 0

    def test_accept_starts_session_for_both(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)

    def test_student_cannot_invite(self, harness):
        fix = harness.server()
        s = harness.login(fix, "ali")
        s.client.invite("siti")
        s.expect_error("NOT_TEACHER")

    def test_offline_or_unknown_invitee(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        t.client.invite("siti")
        t.expect_error("STUDENT_OFFLINE")
        t.client.invite("ghost")
        t.expect_error("STUDENT_OFFLINE")

    def test_pending_invite_makes_teacher_busy(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        harness.login(fix, "ali")
        harness.login(fix, "siti")
        t.client.invite("ali")
        t.client.invite("siti")
        t.expect_error("BUSY")

    def test_student_in_session_is_busy_for_other_teachers(self, harness):
        fix = harness.server(users=TWO_TEACHERS)
        t1 = harness.login(fix, "cikgu")
        t2 = harness.login(fix, "ustaz")
        s = harness.login(fix, "ali")
        open_session(t1, s)
        t2.client.invite("ali")
        t2.expect_error("BUSY")

    def test_decline_notifies_both(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        t.client.invite("ali")
        invite = s.expect(InviteReceived)
        s.client.respond_invite(invite.session_id, False)
        assert t.expect(SessionEnded).reason == "declined"
        assert s.expect(SessionEnded).reason == "declined"

    def test_unanswered_invite_expires(self, harness):
        fix = harness.server(invite_expiry=0.5, sweep_interval=0.2,
                             idle_threshold=60.0)
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        t.client.invite("ali")
        s.expect(InviteReceived)
        assert t.expect(SessionEnded, timeout=3.0).reason == "expired"
        assert s.expect(SessionEnded, timeout=3.0).reason == "expired"

    def test_response_to_unknown_session(self, harness):
        fix = harness.server()
        s = harness.login(fix, "ali")
        s.client.respond_invite(4242, True)
        s.expect_error("NO_SUCH_SESSION")

    def test_pending_invite_cancel_over_wire(self, harness):
        # the headless client never learns the invite id, so cancelling a
        # not-yet-accepted invite is a wire-level capability only
        fix = harness.server()
        s = harness.login(fix, "ali")
        raw = RawConn(fix.addr)
        try:
            assert raw.login("cikgu", "pw-cikgu")["t"] == "login_ok"
            raw.send("invite", {"student": "ali"})
            invite = s.expect(InviteReceived)
            raw.send("session_end", {"session_id": invite.session_id})
            msg = raw.read_until("session_end_evt")
            assert msg["body"]["reason"] == "self_ended"
            assert s.expect(SessionEnded).reason == "peer_ended"
        finally:
            raw.close()


class TestSharedPages:
    def test_page_set_reaches_both_with_same_digest(self, harness):
        fix = classroom(harness)
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        mid = fix.materials["notes"].material_id
        t.client.set_page(mid, 1)
        pt = t.expect(PageChanged)
        ps = s.expect(PageChanged)
        assert (pt.material_id, pt.page_index, pt.digest) == \
            (ps.material_id, ps.page_index, ps.digest) == (mid, 1, pt.digest)
        ready = s.expect(PageBytesReady)
        assert ready.digest == ps.digest
        assert s.client.cache.get(bytes.fromhex(ps.digest)) == PAGES[1]

    def test_unknown_material_is_bad_page(self, harness):
        fix = classroom(harness)
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        t.client.set_page("m9999", 0)
        t.expect_error("BAD_PAGE")

    def test_page_index_out_of_range(self, harness):
        fix = classroom(harness)
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        mid = fix.materials["notes"].material_id
        t.client.set_page(mid, len(PAGES))
        t.expect_error("BAD_PAGE")

    def test_page_set_outside_session(self, harness):
        fix = classroom(harness)
        t = harness.login(fix, "cikgu")
        t.client.set_page(fix.materials["notes"].material_id, 0)
        t.expect_error("NOT_IN_SESSION")

    def test_student_navigation_rejected(self, harness):
        # the client refuses locally; the wire-level guard needs a raw student
        fix = classroom(harness)
        t = harness.login(fix, "cikgu")
        raw = RawConn(fix.addr)
        try:
            assert raw.login("ali", "pw-ali")["t"] == "login_ok"
            t.client.invite("ali")
            invite = raw.read_until("invite_evt")
            sid = invite["body"]["session_id"]
            raw.send("invite_resp", {"session_id": sid, "accept": True})
            raw.read_until("session_start")
            raw.send("page_set", {
                "session_id": sid,
                "material_id": fix.materials["notes"].material_id,
                "page_index": 0})
            msg = raw.read_until("error")
            assert msg["body"]["code"] == "NOT_TEACHER_PARTY"
        finally:
            raw.close()

    def test_foreign_session_id_is_not_in_session(self, harness):
        fix = harness.server(users=TWO_TEACHERS,
                             materials=[("notes", "cikgu", PAGES)])
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        sid = open_session(t, s)
        raw = RawConn(fix.addr)
        try:
            assert raw.login("ustaz", "pw-ustaz")["t"] == "login_ok"
            raw.send("page_set", {
                "session_id": sid,
                "material_id": fix.materials["notes"].material_id,
                "page_index": 0})
            msg = raw.read_until("error")
            assert msg["body"]["code"] == "NOT_IN_SESSION"
        finally:
            raw.close()

    def test_bookmark_restores_page_on_next_session(self, harness):
        fix = classroom(harness)
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        mid = fix.materials["notes"].material_id
        t.client.set_page(mid, 2)
        s.expect(PageBytesReady)
        t.client.end_session()
        t.expect(SessionEnded)
        s.expect(SessionEnded)
        open_session(t, s)
        restored = s.expect(PageChanged)
        assert (restored.material_id, restored.page_index) == (mid, 2)
        assert restored.bytes_ready  # still cached from the first session
        t_restored = t.expect(PageChanged)
        assert (t_restored.material_id, t_restored.page_index) == (mid, 2)


class TestCursors:
    def test_cursor_relayed_both_ways(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        t.client.set_cursor(0.25, 0.75)
        got = s.expect(PeerCursor)
        assert (got.x, got.y) == (0.25, 0.75)
        s.client.set_cursor(0.5, 0.5)
        got = t.expect(PeerCursor)
        assert (got.x, got.y) == (0.5, 0.5)

    def test_out_of_range_rejected(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        t.client.set_cursor(1.5, 0.5)
        t.expect_error("OUT_OF_RANGE")
        s.assert_none(PeerCursor)

    def test_cursor_needs_session(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        t.client.set_cursor(0.5, 0.5)
        t.expect_error("NOT_IN_SESSION")


class TestAudio:
    def test_frames_relayed_in_order(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        for payload in (b"one", b"two", b"three"):
            t.client.send_audio(payload)
        got = [s.expect(AudioReceived) for _ in range(3)]
        assert [g.seq for g in got] == [1, 2, 3]
        assert [g.payload for g in got] == [b"one", b"two", b"three"]

    def test_audio_needs_session(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        t.client.send_audio(b"x")
        t.expect_error("NOT_IN_SESSION")

    def test_wrong_session_id_rejected(self, harness):
        fix = harness.server()
        s = harness.login(fix, "ali")
        raw = RawConn(fix.addr)
        try:
            assert raw.login("cikgu", "pw-cikgu")["t"] == "login_ok"
            raw.send("invite", {"student": "ali"})
            invite = s.expect(InviteReceived)
            s.client.respond_invite(invite.session_id, True)
            raw.read_until("session_start")
            bad = AudioChunk(invite.session_id + 1, 1, b"noise")
            raw.send_raw(encode_frame(encode_audio(bad)))
            msg = raw.read_until("error")
            assert msg["body"]["code"] == "SESSION_MISMATCH"
        finally:
            raw.close()


class TestSessionEnd:
    def test_end_reasons_by_party(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        t.client.end_session()
        assert t.expect(SessionEnded).reason == "self_ended"
        assert s.expect(SessionEnded).reason == "peer_ended"

    def test_student_can_end_too(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        s.client.end_session()
        assert s.expect(SessionEnded).reason == "self_ended"
        assert t.expect(SessionEnded).reason == "peer_ended"

    def test_disconnect_surfaces_to_peer(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        s.client.close()
        assert t.expect(SessionEnded).reason == "peer_disconnected"

    def test_session_frames_after_end_rejected(self, harness):
        fix = classroom(harness)
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        open_session(t, s)
        t.client.end_session()
        t.expect(SessionEnded)
        t.client.set_page(fix.materials["notes"].material_id, 0)
        t.expect_error("NOT_IN_SESSION")

    def test_teacher_free_after_end(self, harness):
        fix = harness.server()
        t = harness.login(fix, "cikgu")
        s = harness.login(fix, "ali")
        siti = harness.login(fix, "siti")
        open_session(t, s)
        t.client.end_session()
        t.expect(SessionEnded)
        s.expect(SessionEnded)
        t.client.invite("siti")
        siti.expect(InviteReceived)
