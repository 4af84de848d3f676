# tests/test_pcap_reader.py

import socket

import pytest

from src.cli import main
from src.ingest.trace_reader import group_flows, load_flows

dpkt = pytest.importorskip("dpkt")

CLIENT, SERVER = "10.0.0.1", "93.184.216.34"


def _tcp(src, dst, sport, dport, flags, payload=b""):
    seg = dpkt.tcp.TCP(sport=sport, dport=dport, flags=flags, data=payload)
    return dpkt.ip.IP(src=socket.inet_aton(src), dst=socket.inet_aton(dst), p=dpkt.ip.IP_PROTO_TCP,
                      len=20 + len(bytes(seg)), data=seg)


def _udp(src, dst, sport, dport, payload):
    seg = dpkt.udp.UDP(sport=sport, dport=dport, ulen=8 + len(payload), data=payload)
    return dpkt.ip.IP(src=socket.inet_aton(src), dst=socket.inet_aton(dst), p=dpkt.ip.IP_PROTO_UDP,
                      len=20 + len(bytes(seg)), data=seg)


def _eth(payload, eth_type=dpkt.ethernet.ETH_TYPE_IP):
    return bytes(dpkt.ethernet.Ethernet(dst=b"\x02" * 6, src=b"\x04" * 6, type=eth_type, data=payload))


@pytest.fixture
def capture(tmp_path):
    path = tmp_path / "capture.pcap"
    with open(path, "wb") as f:
        w = dpkt.pcap.Writer(f)
        w.writepkt(_eth(_tcp(CLIENT, SERVER, 5000, 443, dpkt.tcp.TH_SYN)), ts=100.0)
        w.writepkt(_eth(_tcp(SERVER, CLIENT, 443, 5000, dpkt.tcp.TH_SYN | dpkt.tcp.TH_ACK)), ts=100.02)
        w.writepkt(_eth(_tcp(CLIENT, SERVER, 5000, 443, dpkt.tcp.TH_ACK, b"x" * 300)), ts=100.03)
        # не IP - пропускается
        w.writepkt(_eth(bytes(dpkt.arp.ARP()), eth_type=dpkt.ethernet.ETH_TYPE_ARP), ts=100.04)
        w.writepkt(_eth(_udp(CLIENT, SERVER, 6000, 3478, b"y" * 1600)), ts=100.05)
    return path


def test_pcap_to_records(capture):
    from src.ingest.pcap_reader import pcap_to_records

    records = pcap_to_records(str(capture), label="chat")
    assert len(records) == 4
    assert records[0].timestamp == 0.0
    assert records[1].timestamp == pytest.approx(0.02)
    assert records[0].syn_flag and not records[0].ack_flag
    assert records[1].syn_flag and records[1].ack_flag
    assert records[2].payload_len == 300
    # payload длиннее MTU обрезается
    assert records[3].payload_len == 1500
    assert records[3].transport == "udp"
    assert all(r.label == "chat" for r in records)

    flows = group_flows(records)
    assert len(flows) == 2
    tcp = flows[0]
    assert tcp.key.src_addr == CLIENT and tcp.key.dst_port == 443
    assert [p.is_upstream for p in tcp.packets] == [True, False, True]


def test_ingest_command_reads_pcap(capture, tmp_path):
    out = tmp_path / "flows.jsonl"
    assert main(["ingest", "--input", str(capture), "--output", str(out), "--label", "chat"]) == 0
    flows = load_flows(str(out))
    assert len(flows) == 2
    assert {f.label for f in flows} == {"chat"}


def test_truncated_payloads_are_reported(capture, caplog, monkeypatch):
    from src.ingest import pcap_reader

    monkeypatch.setattr(pcap_reader.logger, "propagate", True)
    with caplog.at_level("WARNING", logger="src.ingest.pcap_reader"):
        pcap_reader.pcap_to_records(str(capture))
    warnings = [r for r in caplog.records if r.levelname == "WARNING"]
    assert len(warnings) == 1
    assert "1 payloads longer than MTU 1500" in warnings[0].getMessage()
