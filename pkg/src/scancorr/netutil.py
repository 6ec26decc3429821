"""Small helpers around :mod:`ipaddress` shared by the pipeline stages."""

import ipaddress

IPAddress = ipaddress.IPv4Address | ipaddress.IPv6Address
IPNetwork = ipaddress.IPv4Network | ipaddress.IPv6Network


def ip_key(ip):
    """Canonical sort key: v4 before v6, then network byte order."""
    return (ip.version, ip.packed)


def bit_width(ip):
    return ip.max_prefixlen


def common_prefix_len(a, b):
    """Number of equal leading bits of two same-family addresses."""
    if a.version != b.version:
        raise ValueError(f"mixed address families: {a} vs {b}")
    width = a.max_prefixlen
    return width - (int(a) ^ int(b)).bit_length()


def parse_network(text):
    """Parse a CIDR, rejecting host bits below the prefix."""
    return ipaddress.ip_network(text.strip(), strict=True)
