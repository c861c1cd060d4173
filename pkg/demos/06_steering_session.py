"""End-to-end steering session against an in-process navigation service.

Starts the service, subscribes a client over the length-prefixed JSON
channel, steers the virtual needle toward the image plane with set_pose
messages, and prints the cue broadcasts as the contact state develops.
"""

import asyncio
import json
import socket
import struct
import threading
import time

import numpy as np

from usnav.geometry import RigidTransform
from usnav.service import NavService, NavServiceConfig, SessionConfig, encode_message
from usnav.wire import TrackingPacket


def recv_message(sock):
    header = b""
    while len(header) < 4:
        header += sock.recv(4 - len(header))
    (length,) = struct.unpack("<I", header)
    payload = b""
    while len(payload) < length:
        payload += sock.recv(length - len(payload))
    return json.loads(payload.decode("utf-8"))


def set_pose(tool_id, pose):
    packet = TrackingPacket.from_pose(tool_id, int(time.monotonic_ns() // 1000), pose)
    return {
        "type": "set_pose",
        "session": "default",
        "tool_id": tool_id,
        "timestamp_us": packet.timestamp_us,
        "quaternion": list(packet.quaternion),
        "translation": list(packet.translation),
    }


config = NavServiceConfig(sessions=[SessionConfig(mode="out_of_plane")])
service = NavService(config)
loop = asyncio.new_event_loop()
started = threading.Event()


def runner():
    asyncio.set_event_loop(loop)
    loop.run_until_complete(service.start())
    started.set()
    loop.run_forever()


thread = threading.Thread(target=runner, daemon=True)
thread.start()
started.wait(5.0)
print(f"service up: tcp={service.tcp_port} udp={service.udp_port} health={service.health_port}")

sock = socket.create_connection(("127.0.0.1", service.tcp_port))
sock.sendall(encode_message({"type": "subscribe", "session": "default"}))
info = recv_message(sock)
print(f"subscribed; mode={info['mode']}, contact alpha={info['cue_config']['contact_image_alpha']}")

# probe at identity: the image plane is the world x-y plane
sock.sendall(encode_message(set_pose(1, RigidTransform.identity())))
recv_message(sock)  # pose_update
recv_message(sock)  # tracking_lost: needle unseen yet

# steer the needle tip from 30 mm out down to contact: the needle tool
# shaft leaves along +z, so feeding from below the plane keeps the
# signed distance positive on the entry side
print(f"\n{'tip d mm':>9} {'broadcast':>12} {'mode':>12} {'alpha':>6}")
for d in [30.0, 20.0, 12.0, 6.0, 2.0, 0.2]:
    pose = RigidTransform(np.eye(3), np.array([4.0, 8.0, -(d + 120.0)]))
    sock.sendall(encode_message(set_pose(2, pose)))
    messages = [recv_message(sock), recv_message(sock)]
    cue = next(m for m in messages if m["type"] == "cue_state")
    state = cue["state"]
    print(
        f"{d:9.1f} {cue['type']:>12} {state['display_mode']:>12} {state['image_alpha']:6.2f}"
    )

sock.close()
asyncio.run_coroutine_threadsafe(service.stop(), loop).result(5.0)
loop.call_soon_threadsafe(loop.stop)
thread.join(2.0)
print("\ncontact turns the tip red and drops the plane alpha; the browser UI")
print("renders exactly these served values (see frontend/).")
