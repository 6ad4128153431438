import pytest

from ecoforecast import network
from ecoforecast.network import NetworkError


def test_grid_shape_and_roundtrip():
    g = network.generate_grid(6, 6, seed=1)
    # 2 * rows * (cols - 1) * 2 directed links
    assert len(g) == 120
    assert g.strongly_connected()
    assert network.load_network(network.export_network(g)) == g


def test_grid_reverse_links_share_attributes():
    g = network.generate_grid(3, 4, seed=9)
    for l in g.links:
        r = g.link(g.reverse(l.id))
        assert (r.lanes, r.free_flow_speed, r.length) == (l.lanes, l.free_flow_speed, l.length)


def test_in_links():
    net = network.sample_network()
    for l in net.links:
        assert all(net.link(u).to_node == l.from_node for u in net.in_links(l.id))


@pytest.mark.parametrize("text,msg", [
    ("node,A\nnode,A\n", "duplicate node"),
    ("node,A\nnode,B\nlink,X,A,C,100,1,50\n", "unknown node"),
    ("node,A\nnode,B\nlink,X,A,B,0,1,50\nlink,Y,B,A,10,1,50\n", "length"),
    ("node,A\nnode,B\nlink,X,A,B,100,1,50\n", "strongly connected"),
])
def test_rejects_bad_networks(text, msg):
    with pytest.raises(NetworkError, match=msg):
        network.load_network(text)
