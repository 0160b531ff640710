from twinsac.twinlink.protocol import (
    BadMagic,
    FrameDecoder,
    IncompleteFrame,
    LengthMismatch,
    MsgType,
    ProtocolError,
    SeqTracker,
    TwinFrame,
    UnknownMsgType,
    UnsupportedVersion,
    decode_frame,
    encode_frame,
)
from twinsac.twinlink.session import (
    DelayRelay,
    DivergenceReport,
    LatencyStats,
    PublishSummary,
    TwinLinkError,
    follow,
    hybrid_ns,
    parse_address,
    publish,
)
