"""
A session over localhost sockets
================================

Each database runs in its own TCP server and only ever sees its own query
matrix.  The user sends the dense byte encoding, reads back the answer
string, and decodes.
"""

from pfrlab import SchemeParams, SocketTransport, DatabaseNode, build_generator, encode_shards, run_session
from pfrlab.protocol import session_inputs

p = SchemeParams(N=4, K=2, M=2, q=3)
G = build_generator(p.N, p.K, p.q)
print(G.G)

#%%
# Shards are built once; the same servers handle a request for every combination.
store, A = session_inputs(p, seed=5)
nodes = [DatabaseNode(s) for s in encode_shards(store, G)]
with SocketTransport(nodes) as tr:
    for nu in range(1, p.V + 1):
        t = run_session(p, nu, seed=5, transport=tr, G=G, store=store, assignment=A)
        sizes = [len(a) for a in t.answers.values()]
        print(f"nu={nu}  answers per DB {sizes}  rate {t.rate['rate']}  correct {t.correct}")
