import socket
import threading

from twinsac.kinematics import ArmModel
from twinsac.twinlink import DelayRelay, MsgType, TwinFrame, encode_frame, follow, publish
from twinsac.twinlink.protocol import FrameDecoder


def loopback_session(source, model=None, rate_hz=50.0, delay_ms=None):
    """Run publish and follow on localhost; returns (PublishSummary, DivergenceReport)."""
    ready = threading.Event()
    box = {}

    def on_listening(addr):
        box["addr"] = addr
        ready.set()

    def serve():
        try:
            box["summary"] = publish(source, ("127.0.0.1", 0), rate_hz=rate_hz, on_listening=on_listening)
        except BaseException as exc:  # surfaced by the caller
            box["error"] = exc
            ready.set()

    t = threading.Thread(target=serve, daemon=True)
    t.start()
    assert ready.wait(10), "publisher did not start"
    if "error" in box:
        raise box["error"]
    relay = DelayRelay(box["addr"], delay_ms) if delay_ms else None
    try:
        report = follow(relay.address if relay else box["addr"], model or ArmModel())
    finally:
        if relay:
            relay.close()
    t.join(30)
    if "error" in box:
        raise box["error"]
    return box["summary"], report


def raw_publisher(seqs, joints):
    """Minimal hand-rolled publisher that sends JOINT_STATE frames with chosen seqs."""
    srv = socket.socket()
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)
    addr = srv.getsockname()

    def run():
        conn, _ = srv.accept()
        dec = FrameDecoder()
        while not any(f.msg_type is MsgType.HELLO for f in dec.feed(conn.recv(1024))):
            pass
        conn.sendall(encode_frame(TwinFrame.hello(0, 0)))
        for s in seqs:
            conn.sendall(encode_frame(TwinFrame.joint_state(s, 1, joints)))
        conn.shutdown(socket.SHUT_WR)
        while conn.recv(4096):
            pass
        conn.close()
        srv.close()

    t = threading.Thread(target=run, daemon=True)
    t.start()
    return addr, t
