"""Ten hand-written flows and their expected feature values for every set.

Values are computed here straight from the feature definitions (sizes are L3
payload bytes per packet; Ramos byte totals are L4 payload).
"""
import json
import sys
from pathlib import Path

FIN, SYN, RST, PSH, ACK, URG, ECE, CWR = 1, 2, 4, 8, 16, 32, 64, 128
C2S, S2C = "ClientToServer", "ServerToClient"


def pkt(t, d, l4, flags=0, tcp=True):
    hdr = 20 if tcp else 8
    return {"timestamp": t, "direction": d, "ip_total_length": 20 + hdr + l4, "l3_payload": hdr + l4,
            "l4_payload": l4, "tcp_flags": flags}


def flow(cip, cport, sip, sport, proto, packets, proto_name="Other"):
    return {"key": {"client_ip": cip, "server_ip": sip, "client_port": cport, "server_port": sport, "transport": proto},
            "packets": packets, "first_ts": packets[0]["timestamp"], "last_ts": packets[-1]["timestamp"],
            "duration": packets[-1]["timestamp"] - packets[0]["timestamp"], "label": None,
            "hints": {"http_host": None, "tls_sni": None, "dns_qnames": [], "inferred_protocol": proto_name}}


T0 = 1700000000.0
FLOWS = [
    # 0: HTTP GET, full handshake and FIN teardown
    flow("10.0.0.1", 40000, "10.0.1.1", 80, "tcp", [
        pkt(T0, C2S, 0, SYN), pkt(T0 + 0.01, S2C, 0, SYN | ACK), pkt(T0 + 0.02, C2S, 0, ACK),
        pkt(T0 + 0.03, C2S, 300, PSH | ACK), pkt(T0 + 0.05, S2C, 0, ACK), pkt(T0 + 0.06, S2C, 1460, ACK),
        pkt(T0 + 0.061, S2C, 540, PSH | ACK), pkt(T0 + 0.07, C2S, 0, ACK), pkt(T0 + 0.08, C2S, 0, FIN | ACK),
        pkt(T0 + 0.09, S2C, 0, FIN | ACK), pkt(T0 + 0.1, C2S, 0, ACK)], "HTTP"),
    # 1: DNS query/response
    flow("10.0.0.1", 50000, "10.0.1.53", 53, "udp", [
        pkt(T0 + 1, C2S, 33, tcp=False), pkt(T0 + 1.025, S2C, 49, tcp=False)], "DNS"),
    # 2: single client UDP datagram
    flow("10.0.0.2", 50001, "10.0.1.9", 9999, "udp", [pkt(T0 + 2, C2S, 100, tcp=False)]),
    # 3: server-only packets (capture started mid-connection)
    flow("10.0.0.3", 40001, "10.0.1.1", 443, "tcp", [
        pkt(T0 + 3, S2C, 0, SYN | ACK), pkt(T0 + 3.5, S2C, 200, PSH | ACK)], "HTTPS"),
    # 4: connection reset by the server after a request
    flow("10.0.0.4", 40002, "10.0.1.1", 443, "tcp", [
        pkt(T0 + 4, C2S, 0, SYN), pkt(T0 + 4.01, S2C, 0, SYN | ACK), pkt(T0 + 4.02, C2S, 0, ACK),
        pkt(T0 + 4.03, C2S, 517, PSH | ACK), pkt(T0 + 4.04, S2C, 0, RST | ACK)], "HTTPS"),
    # 5: ECN negotiation with CWR/ECE and URG
    flow("10.0.0.5", 40003, "10.0.1.2", 8080, "tcp", [
        pkt(T0 + 5, C2S, 0, SYN | ECE | CWR), pkt(T0 + 5.01, S2C, 0, SYN | ACK | ECE), pkt(T0 + 5.02, C2S, 0, ACK),
        pkt(T0 + 5.03, C2S, 10, URG | ACK), pkt(T0 + 5.04, S2C, 5, PSH | ACK)]),
    # 6: long-lived client-heavy upload
    flow("10.0.0.6", 40004, "10.0.1.3", 80, "tcp", [
        pkt(T0 + 6, C2S, 0, SYN), pkt(T0 + 6.02, S2C, 0, SYN | ACK), pkt(T0 + 6.04, C2S, 0, ACK),
        pkt(T0 + 10, C2S, 1460, ACK), pkt(T0 + 20, C2S, 1460, ACK), pkt(T0 + 30, C2S, 77, PSH | ACK),
        pkt(T0 + 30.02, S2C, 0, ACK), pkt(T0 + 126.5, S2C, 25, PSH | ACK)], "HTTP"),
    # 7: two DNS exchanges on one socket
    flow("10.0.0.7", 50002, "10.0.1.53", 53, "udp", [
        pkt(T0 + 7, C2S, 30, tcp=False), pkt(T0 + 7.01, S2C, 46, tcp=False),
        pkt(T0 + 7.02, C2S, 30, tcp=False), pkt(T0 + 7.03, S2C, 58, tcp=False)], "DNS"),
    # 8: data in both directions without handshake (mid-stream capture)
    flow("10.0.0.8", 40005, "10.0.1.4", 443, "tcp", [
        pkt(T0 + 8, C2S, 120, PSH | ACK), pkt(T0 + 8.1, S2C, 0, ACK), pkt(T0 + 8.2, S2C, 3000 - 1460, PSH | ACK),
        pkt(T0 + 8.3, C2S, 0, FIN | ACK)], "HTTPS"),
    # 9: zero-duration two-packet TCP exchange with repeated flags
    flow("10.0.0.9", 40006, "10.0.1.5", 22, "tcp", [
        pkt(T0 + 9, C2S, 64, PSH | ACK), pkt(T0 + 9, C2S, 64, PSH | ACK)]),
]

FLAG_NAMES = ["flag_fin", "flag_syn", "flag_rst", "flag_psh", "flag_ack", "flag_urg", "flag_ece", "flag_cwr"]


def div(a, b):
    return a / b if b else 0.0


def history(f):
    seen = {C2S: set(), S2C: set()}
    out = ""
    tcp = f["key"]["transport"] == "tcp"
    for p in f["packets"]:
        fl, d = p["tcp_flags"], p["direction"]
        letters = []
        if tcp:
            if fl & SYN and not fl & ACK:
                letters.append("S")
            if fl & SYN and fl & ACK:
                letters.append("H")
            if fl & ACK and not fl & SYN and not fl & (FIN | RST) and p["l4_payload"] == 0:
                letters.append("A")
            if p["l4_payload"] > 0:
                letters.append("D")
            if fl & FIN:
                letters.append("F")
            if fl & RST:
                letters.append("R")
        elif p["l4_payload"] > 0:
            letters.append("D")
        for c in letters:
            if c in seen[d]:
                continue
            seen[d].add(c)
            out += c if d == C2S else c.lower()
    return out


def features(f):
    src = [p for p in f["packets"] if p["direction"] == C2S]
    dst = [p for p in f["packets"] if p["direction"] == S2C]
    bs = sum(p["l3_payload"] for p in src)
    bd = sum(p["l3_payload"] for p in dst)
    flags = 0
    for p in f["packets"]:
        flags |= p["tcp_flags"]
    fl = {n: float((flags >> i) & 1) for i, n in enumerate(FLAG_NAMES)}
    n = len(f["packets"])
    v5 = {"pkt_count_bi": n, "bytes_total_bi": bs + bd, "duration": f["duration"], **fl}
    v5e = dict(v5, mean_pkt_size_bi=div(bs + bd, n))
    v9 = {"pkt_count_src": len(src), "pkt_count_dst": len(dst), "bytes_total_src": bs, "bytes_total_dst": bd,
          "min_pkt_size_src": min((p["l3_payload"] for p in src), default=0),
          "max_pkt_size_src": max((p["l3_payload"] for p in src), default=0), "duration": f["duration"], **fl}
    v9e = dict(v9, pkt_count_bi=n, bytes_total_bi=bs + bd, mean_pkt_size_bi=div(bs + bd, n),
               mean_pkt_size_src=div(bs, len(src)), mean_pkt_size_dst=div(bd, len(dst)),
               ratio_bytes=div(bd, bs), ratio_pkts=div(len(dst), len(src)))
    port = f["key"]["server_port"]
    service = {53: "dns", 80: "http", 443: "ssl"}.get(port, "-")
    ramos = {"pkt_count_bi": n, "bytes_total_bi": sum(p["l4_payload"] for p in f["packets"]),
             "tcp_history": history(f), "protocol": f["key"]["transport"], "service": service}
    return {"nfv5": v5, "nfv5ext": v5e, "nfv9": v9, "nfv9ext": v9e, "ramos": ramos}


def main(out_dir):
    out = Path(out_dir)
    with open(out / "golden_flows.jsonl", "w") as fh:
        for f in FLOWS:
            fh.write(json.dumps(f) + "\n")
    (out / "golden_features.json").write_text(json.dumps([features(f) for f in FLOWS], indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
